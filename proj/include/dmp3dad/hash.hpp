#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dmp3dad {

/// Incremental SHA-256, hex-encoded on finish.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  /// Appends a length prefix and then the text, so concatenated fields
  /// cannot alias each other.
  Sha256& field(std::string_view text);
  Sha256& field(double value);
  Sha256& field(std::int64_t value);

  std::string hex();

 private:
  void* ctx_;
};

std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_file_hex(const std::string& path);

}  // namespace dmp3dad
