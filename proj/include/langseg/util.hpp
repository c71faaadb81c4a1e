#pragma once

// Hashing, file helpers, and the flat key/value config format.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace langseg {

// Deterministic sampling helpers. The standard distributions are
// implementation-defined, so everything random in the pipeline draws through
// these instead (modulo bias is negligible against 2^64 for our tiny ranges).
inline int int_range(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}
inline double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Streaming SHA-256 (OpenSSL EVP under the hood).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex();  // finalizes; instance unusable afterwards

 private:
  void* ctx_;
};

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(const std::string& s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Flat `key = value` config: one pair per line, '#' comments, blank lines
// ignored. Later assignments override earlier ones. Canonical serialization
// is key-sorted, so its hash identifies the configuration.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key) const;           // throws if absent
  std::string get_str(const std::string& key, const std::string& dflt) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool dflt) const;

  std::string canonical() const;  // sorted "key = value\n" lines
  std::string hash() const { return sha256_hex(canonical()); }
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Path helpers (thin std::filesystem wrappers kept here so call sites stay
// terse).
void ensure_dir(const std::string& path);
std::string path_join(const std::string& a, const std::string& b);
std::string parent_dir(const std::string& path);

}  // namespace langseg
