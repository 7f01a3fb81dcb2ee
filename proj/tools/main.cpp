#include "patchdet/cli.hpp"

int main(int argc, char** argv) { return patchdet::dispatch(argc, argv); }
