#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "patchdet/errors.hpp"

namespace patchdet {

/// Flat key=value configuration with dotted section prefixes
/// (e.g. "train.lr = 0.03"). '#' starts a comment; blank lines ignored.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::filesystem::path& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Canonical serialization (sorted keys), used for manifests and hashing.
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

/// FNV-1a 64-bit over a file's bytes, as a hex string.
std::string hash_file_hex(const std::filesystem::path& path);
std::string hash_bytes_hex(const std::string& bytes);

} // namespace patchdet
