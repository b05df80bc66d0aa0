#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace dmp3dad::onnx {

/// Storage classes the interpreter computes in. Every ONNX floating type is
/// held as float32; every integer type as int64.
enum class ElemKind { f32, i64, boolean };

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

struct Tensor {
  ElemKind kind = ElemKind::f32;
  Shape shape;
  std::vector<float> f;         ///< f32 payload
  std::vector<std::int64_t> i;  ///< i64 and boolean payload

  std::int64_t size() const { return numel(shape); }
  std::size_t rank() const { return shape.size(); }

  static Tensor floats(Shape shape, std::vector<float> values = {});
  static Tensor ints(Shape shape, std::vector<std::int64_t> values = {});
  static Tensor bools(Shape shape, std::vector<std::int64_t> values = {});
};

}  // namespace dmp3dad::onnx
