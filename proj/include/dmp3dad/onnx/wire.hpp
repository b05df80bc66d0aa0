#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "dmp3dad/error.hpp"

namespace dmp3dad::onnx {

/// Minimal protobuf wire-format cursor. Only what the ONNX schema needs:
/// varints, 32/64-bit fixed fields and length-delimited payloads.
class WireReader {
 public:
  enum class WireType : std::uint32_t { varint = 0, fixed64 = 1, length = 2, fixed32 = 5 };

  struct Field {
    std::uint32_t number = 0;
    WireType type = WireType::varint;
  };

  explicit WireReader(std::span<const std::byte> data) : data_(data) {}

  bool done() const { return pos_ >= data_.size(); }

  Field next_field() {
    const std::uint64_t key = varint();
    const auto type = static_cast<std::uint32_t>(key & 7);
    if (type != 0 && type != 1 && type != 2 && type != 5) {
      throw ModelError("protobuf: unsupported wire type " + std::to_string(type));
    }
    return {static_cast<std::uint32_t>(key >> 3), static_cast<WireType>(type)};
  }

  std::uint64_t varint() {
    std::uint64_t value = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const auto byte = static_cast<std::uint8_t>(take(1)[0]);
      value |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
      if ((byte & 0x80) == 0) return value;
    }
    throw ModelError("protobuf: varint too long");
  }

  std::int64_t int64() { return static_cast<std::int64_t>(varint()); }

  std::uint32_t fixed32() {
    std::uint32_t v = 0;
    const auto b = take(4);
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
    return v;
  }

  std::uint64_t fixed64() {
    std::uint64_t v = 0;
    const auto b = take(8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
    return v;
  }

  std::span<const std::byte> bytes() {
    const std::uint64_t len = varint();
    if (len > data_.size() - pos_) throw ModelError("protobuf: truncated length-delimited field");
    return take(static_cast<std::size_t>(len));
  }

  std::string string() {
    const auto b = bytes();
    return {reinterpret_cast<const char*>(b.data()), b.size()};
  }

  void skip(WireType type) {
    switch (type) {
      case WireType::varint: varint(); break;
      case WireType::fixed64: take(8); break;
      case WireType::length: bytes(); break;
      case WireType::fixed32: take(4); break;
    }
  }

 private:
  std::span<const std::byte> take(std::size_t n) {
    if (n > data_.size() - pos_) throw ModelError("protobuf: unexpected end of data");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

}  // namespace dmp3dad::onnx
