#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace baq {

/// Incremental SHA-256; digest() returns lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update_u64(std::uint64_t v);
  /// Little-endian IEEE-754 bytes of each value.
  void update_doubles(std::span<const double> values);
  std::string digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view data);

}  // namespace baq
