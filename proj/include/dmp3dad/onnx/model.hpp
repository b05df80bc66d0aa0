#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmp3dad/onnx/tensor.hpp"

namespace dmp3dad::onnx {

struct Graph;

struct Attribute {
  enum class Type { undefined = 0, f = 1, i = 2, s = 3, t = 4, g = 5, floats = 6, ints = 7, strings = 8 };
  Type type = Type::undefined;
  float f = 0.0f;
  std::int64_t i = 0;
  std::string s;
  std::shared_ptr<Tensor> t;
  std::shared_ptr<const Graph> g;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
  std::vector<std::string> strings;
};

struct Node {
  std::string op_type;
  std::string domain;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, Attribute> attributes;

  const Attribute* attr(const std::string& key) const;
  std::int64_t attr_int(const std::string& key, std::int64_t fallback) const;
  float attr_float(const std::string& key, float fallback) const;
  std::string attr_string(const std::string& key, const std::string& fallback) const;
  std::vector<std::int64_t> attr_ints(const std::string& key) const;
  const Graph* attr_graph(const std::string& key) const;
};

/// Graph input or output. Unknown dims are -1.
struct ValueInfo {
  std::string name;
  int elem_type = 0;
  std::optional<Shape> shape;
};

struct Graph {
  std::string name;
  std::vector<Node> nodes;
  std::map<std::string, std::shared_ptr<const Tensor>> initializers;
  std::vector<ValueInfo> inputs;   ///< excludes entries that are initializers
  std::vector<ValueInfo> outputs;
};

struct Model {
  std::int64_t ir_version = 0;
  std::int64_t opset = 0;  ///< default-domain opset
  std::string producer;
  std::map<std::string, std::string> metadata;
  Graph graph;
};

/// Parses a serialized ModelProto. `base_dir` resolves external tensor data.
/// Throws ModelError on malformed input.
Model parse_model(std::span<const std::byte> bytes, const std::filesystem::path& base_dir = {});
Model load_model(const std::filesystem::path& path);

}  // namespace dmp3dad::onnx
