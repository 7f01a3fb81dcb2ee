#include "patchdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace patchdet {

namespace {

constexpr char kMagic[8] = {'P', 'D', 'C', 'K', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw LoadError("truncated checkpoint");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  auto len = read_pod<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw LoadError("truncated checkpoint");
  return s;
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));

  std::ostringstream cfg;
  cfg << "architecture=" << to_string(ckpt.cfg.architecture) << "\n"
      << "input_size=" << ckpt.cfg.input_size << "\n"
      << "embedding_dim=" << ckpt.cfg.embedding_dim << "\n"
      << "n_classes=" << ckpt.n_classes << "\n";
  write_string(os, cfg.str());
  write_pod<std::uint64_t>(os, ckpt.step);
  write_pod<std::uint64_t>(os, ckpt.rng_state);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, data] : ckpt.tensors) {
    write_string(os, name);
    write_pod<std::uint64_t>(os, data.size());
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!os) throw LoadError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError("not a checkpoint file: " + path.string());

  Checkpoint ckpt;
  std::istringstream cfg(read_string(is));
  std::string line;
  while (std::getline(cfg, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "architecture")
      ckpt.cfg.architecture = arch_from_string(value);
    else if (key == "input_size")
      ckpt.cfg.input_size = std::stoi(value);
    else if (key == "embedding_dim")
      ckpt.cfg.embedding_dim = std::stoi(value);
    else if (key == "n_classes")
      ckpt.n_classes = std::stoi(value);
  }
  ckpt.step = read_pod<std::uint64_t>(is);
  ckpt.rng_state = read_pod<std::uint64_t>(is);
  auto n = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    auto count = read_pod<std::uint64_t>(is);
    std::vector<float> data(count);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw LoadError("truncated checkpoint tensor: " + name);
    ckpt.tensors.emplace(std::move(name), std::move(data));
  }
  return ckpt;
}

} // namespace patchdet
