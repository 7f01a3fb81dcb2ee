#pragma once

namespace patchdet {

/// Entry point behind the patchdet binary. Exit codes: 0 success,
/// 1 usage error, 2 data/config error, 3 numerical abort.
int dispatch(int argc, const char* const* argv);

} // namespace patchdet
