#include "dmp3dad/onnx/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "dmp3dad/error.hpp"
#include "dmp3dad/onnx/wire.hpp"

namespace dmp3dad::onnx {

namespace {

using WT = WireReader::WireType;

// TensorProto.DataType
enum : int {
  kFloat = 1, kUint8 = 2, kInt8 = 3, kUint16 = 4, kInt16 = 5, kInt32 = 6, kInt64 = 7,
  kString = 8, kBool = 9, kFloat16 = 10, kDouble = 11, kUint32 = 12, kUint64 = 13,
  kBfloat16 = 16,
};

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000) << 16;
  const int exp = (h >> 10) & 0x1f;
  const std::uint32_t mant = h & 0x3ff;
  float value;
  if (exp == 0) {
    value = std::ldexp(static_cast<float>(mant), -24);
  } else if (exp == 31) {
    value = mant ? std::numeric_limits<float>::quiet_NaN() : std::numeric_limits<float>::infinity();
  } else {
    value = std::ldexp(static_cast<float>(mant | 0x400), exp - 25);
  }
  return sign ? -value : value;
}

float bf16_to_float(std::uint16_t b) { return std::bit_cast<float>(static_cast<std::uint32_t>(b) << 16); }

template <typename Fn>
void read_repeated_varint(WireReader& r, WT type, Fn&& push) {
  if (type == WT::length) {
    WireReader packed(r.bytes());
    while (!packed.done()) push(packed.varint());
  } else {
    push(r.varint());
  }
}

template <typename Fn>
void read_repeated_fixed32(WireReader& r, WT type, Fn&& push) {
  if (type == WT::length) {
    WireReader packed(r.bytes());
    while (!packed.done()) push(packed.fixed32());
  } else {
    push(r.fixed32());
  }
}

template <typename Fn>
void read_repeated_fixed64(WireReader& r, WT type, Fn&& push) {
  if (type == WT::length) {
    WireReader packed(r.bytes());
    while (!packed.done()) push(packed.fixed64());
  } else {
    push(r.fixed64());
  }
}

std::pair<std::string, std::string> parse_string_entry(std::span<const std::byte> bytes) {
  WireReader r(bytes);
  std::pair<std::string, std::string> kv;
  while (!r.done()) {
    const auto f = r.next_field();
    if (f.number == 1 && f.type == WT::length) kv.first = r.string();
    else if (f.number == 2 && f.type == WT::length) kv.second = r.string();
    else r.skip(f.type);
  }
  return kv;
}

std::string read_external(const std::filesystem::path& base_dir,
                          const std::map<std::string, std::string>& info) {
  const auto loc = info.find("location");
  if (loc == info.end()) throw ModelError("external tensor without location");
  const auto path = base_dir / loc->second;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open external tensor data: " + path.string());
  std::int64_t offset = 0;
  std::int64_t length = -1;
  if (auto it = info.find("offset"); it != info.end()) offset = std::stoll(it->second);
  if (auto it = info.find("length"); it != info.end()) length = std::stoll(it->second);
  in.seekg(0, std::ios::end);
  const std::int64_t total = in.tellg();
  if (length < 0) length = total - offset;
  if (offset < 0 || offset + length > total) throw ModelError("external tensor data out of range");
  std::string out(static_cast<std::size_t>(length), '\0');
  in.seekg(offset);
  in.read(out.data(), length);
  return out;
}

Tensor parse_tensor(std::span<const std::byte> bytes, const std::filesystem::path& base_dir,
                    std::string* name_out = nullptr) {
  WireReader r(bytes);
  Shape dims;
  int data_type = 0;
  std::vector<float> float_data;
  std::vector<double> double_data;
  std::vector<std::int64_t> int_data;  // int32_data / int64_data / uint64_data
  std::span<const std::byte> raw;
  std::string external_raw;
  bool has_raw = false;
  bool external = false;
  std::map<std::string, std::string> external_info;
  std::string name;

  while (!r.done()) {
    const auto f = r.next_field();
    switch (f.number) {
      case 1: read_repeated_varint(r, f.type, [&](std::uint64_t v) { dims.push_back(static_cast<std::int64_t>(v)); }); break;
      case 2: data_type = static_cast<int>(r.varint()); break;
      case 4: read_repeated_fixed32(r, f.type, [&](std::uint32_t v) { float_data.push_back(std::bit_cast<float>(v)); }); break;
      case 5: read_repeated_varint(r, f.type, [&](std::uint64_t v) { int_data.push_back(static_cast<std::int32_t>(v)); }); break;
      case 7: read_repeated_varint(r, f.type, [&](std::uint64_t v) { int_data.push_back(static_cast<std::int64_t>(v)); }); break;
      case 11: read_repeated_varint(r, f.type, [&](std::uint64_t v) { int_data.push_back(static_cast<std::int64_t>(v)); }); break;
      case 8: name = r.string(); break;
      case 9: raw = r.bytes(); has_raw = true; break;
      case 10: read_repeated_fixed64(r, f.type, [&](std::uint64_t v) { double_data.push_back(std::bit_cast<double>(v)); }); break;
      case 13: external_info.insert(parse_string_entry(r.bytes())); break;
      case 14: external = r.varint() == 1; break;
      default: r.skip(f.type);
    }
  }
  if (name_out) *name_out = name;
  if (external) {
    external_raw = read_external(base_dir, external_info);
    raw = std::as_bytes(std::span(external_raw.data(), external_raw.size()));
    has_raw = true;
  }

  const std::int64_t n = numel(dims);
  auto element_size = [&]() -> std::size_t {
    switch (data_type) {
      case kFloat: case kInt32: case kUint32: return 4;
      case kDouble: case kInt64: case kUint64: return 8;
      case kFloat16: case kBfloat16: case kInt16: case kUint16: return 2;
      case kUint8: case kInt8: case kBool: return 1;
      default: throw ModelError("unsupported tensor data type " + std::to_string(data_type) +
                                (name.empty() ? "" : " for " + name));
    }
  };
  const std::size_t esize = element_size();

  Tensor t;
  t.shape = dims;
  const bool is_float = data_type == kFloat || data_type == kDouble || data_type == kFloat16 ||
                        data_type == kBfloat16;
  t.kind = is_float ? ElemKind::f32 : data_type == kBool ? ElemKind::boolean : ElemKind::i64;

  if (has_raw) {
    if (raw.size() != static_cast<std::size_t>(n) * esize) {
      throw ModelError("tensor raw_data size mismatch" + (name.empty() ? "" : " for " + name));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    auto load = [&](std::size_t idx, auto tag) {
      decltype(tag) v;
      std::memcpy(&v, p + idx * sizeof(v), sizeof(v));
      return v;
    };
    if (is_float) t.f.resize(n);
    else t.i.resize(n);
    for (std::int64_t k = 0; k < n; ++k) {
      switch (data_type) {
        case kFloat: t.f[k] = load(k, float{}); break;
        case kDouble: t.f[k] = static_cast<float>(load(k, double{})); break;
        case kFloat16: t.f[k] = half_to_float(load(k, std::uint16_t{})); break;
        case kBfloat16: t.f[k] = bf16_to_float(load(k, std::uint16_t{})); break;
        case kInt64: t.i[k] = load(k, std::int64_t{}); break;
        case kUint64: t.i[k] = static_cast<std::int64_t>(load(k, std::uint64_t{})); break;
        case kInt32: t.i[k] = load(k, std::int32_t{}); break;
        case kUint32: t.i[k] = load(k, std::uint32_t{}); break;
        case kInt16: t.i[k] = load(k, std::int16_t{}); break;
        case kUint16: t.i[k] = load(k, std::uint16_t{}); break;
        case kInt8: t.i[k] = load(k, std::int8_t{}); break;
        case kUint8: t.i[k] = load(k, std::uint8_t{}); break;
        case kBool: t.i[k] = load(k, std::uint8_t{}) != 0; break;
      }
    }
    return t;
  }

  if (data_type == kFloat) t.f = std::move(float_data);
  else if (data_type == kDouble) t.f.assign(double_data.begin(), double_data.end());
  else if (data_type == kFloat16 || data_type == kBfloat16) {
    for (auto v : int_data) {
      const auto bits = static_cast<std::uint16_t>(v);
      t.f.push_back(data_type == kFloat16 ? half_to_float(bits) : bf16_to_float(bits));
    }
  } else if (data_type == kBool) {
    for (auto v : int_data) t.i.push_back(v != 0);
  } else {
    t.i = std::move(int_data);
  }
  const std::size_t have = is_float ? t.f.size() : t.i.size();
  if (have != static_cast<std::size_t>(n)) {
    throw ModelError("tensor element count mismatch" + (name.empty() ? "" : " for " + name));
  }
  return t;
}

Graph parse_graph(std::span<const std::byte> bytes, const std::filesystem::path& base_dir);

Attribute parse_attribute(std::span<const std::byte> bytes, const std::filesystem::path& base_dir,
                          std::string& name) {
  WireReader r(bytes);
  Attribute a;
  bool explicit_type = false;
  while (!r.done()) {
    const auto f = r.next_field();
    switch (f.number) {
      case 1: name = r.string(); break;
      case 2: a.f = std::bit_cast<float>(r.fixed32()); if (!explicit_type) a.type = Attribute::Type::f; break;
      case 3: a.i = r.int64(); if (!explicit_type) a.type = Attribute::Type::i; break;
      case 4: a.s = r.string(); if (!explicit_type) a.type = Attribute::Type::s; break;
      case 5: a.t = std::make_shared<Tensor>(parse_tensor(r.bytes(), base_dir)); if (!explicit_type) a.type = Attribute::Type::t; break;
      case 6: a.g = std::make_shared<const Graph>(parse_graph(r.bytes(), base_dir)); if (!explicit_type) a.type = Attribute::Type::g; break;
      case 7: read_repeated_fixed32(r, f.type, [&](std::uint32_t v) { a.floats.push_back(std::bit_cast<float>(v)); }); if (!explicit_type) a.type = Attribute::Type::floats; break;
      case 8: read_repeated_varint(r, f.type, [&](std::uint64_t v) { a.ints.push_back(static_cast<std::int64_t>(v)); }); if (!explicit_type) a.type = Attribute::Type::ints; break;
      case 9: a.strings.push_back(r.string()); if (!explicit_type) a.type = Attribute::Type::strings; break;
      case 20: a.type = static_cast<Attribute::Type>(r.varint()); explicit_type = true; break;
      default: r.skip(f.type);
    }
  }
  return a;
}

Node parse_node(std::span<const std::byte> bytes, const std::filesystem::path& base_dir) {
  WireReader r(bytes);
  Node n;
  while (!r.done()) {
    const auto f = r.next_field();
    switch (f.number) {
      case 1: n.inputs.push_back(r.string()); break;
      case 2: n.outputs.push_back(r.string()); break;
      case 3: n.name = r.string(); break;
      case 4: n.op_type = r.string(); break;
      case 7: n.domain = r.string(); break;
      case 5: {
        std::string key;
        Attribute a = parse_attribute(r.bytes(), base_dir, key);
        n.attributes[key] = std::move(a);
        break;
      }
      default: r.skip(f.type);
    }
  }
  return n;
}

ValueInfo parse_value_info(std::span<const std::byte> bytes) {
  WireReader r(bytes);
  ValueInfo vi;
  while (!r.done()) {
    const auto f = r.next_field();
    if (f.number == 1 && f.type == WT::length) {
      vi.name = r.string();
    } else if (f.number == 2 && f.type == WT::length) {
      WireReader type(r.bytes());
      while (!type.done()) {
        const auto tf = type.next_field();
        if (tf.number != 1 || tf.type != WT::length) {
          type.skip(tf.type);
          continue;
        }
        WireReader tensor(type.bytes());
        while (!tensor.done()) {
          const auto ef = tensor.next_field();
          if (ef.number == 1) {
            vi.elem_type = static_cast<int>(tensor.varint());
          } else if (ef.number == 2 && ef.type == WT::length) {
            Shape shape;
            WireReader dims(tensor.bytes());
            while (!dims.done()) {
              const auto df = dims.next_field();
              if (df.number != 1 || df.type != WT::length) {
                dims.skip(df.type);
                continue;
              }
              std::int64_t value = -1;
              WireReader dim(dims.bytes());
              while (!dim.done()) {
                const auto xf = dim.next_field();
                if (xf.number == 1) value = dim.int64();
                else dim.skip(xf.type);
              }
              shape.push_back(value);
            }
            vi.shape = std::move(shape);
          } else {
            tensor.skip(ef.type);
          }
        }
      }
    } else {
      r.skip(f.type);
    }
  }
  return vi;
}

Graph parse_graph(std::span<const std::byte> bytes, const std::filesystem::path& base_dir) {
  WireReader r(bytes);
  Graph g;
  std::vector<ValueInfo> inputs;
  while (!r.done()) {
    const auto f = r.next_field();
    if (f.type != WT::length) {
      r.skip(f.type);
      continue;
    }
    switch (f.number) {
      case 1: g.nodes.push_back(parse_node(r.bytes(), base_dir)); break;
      case 2: g.name = r.string(); break;
      case 5: {
        std::string name;
        auto t = std::make_shared<Tensor>(parse_tensor(r.bytes(), base_dir, &name));
        g.initializers[name] = std::move(t);
        break;
      }
      case 11: inputs.push_back(parse_value_info(r.bytes())); break;
      case 12: g.outputs.push_back(parse_value_info(r.bytes())); break;
      default: r.skip(f.type);
    }
  }
  for (auto& vi : inputs) {
    if (!g.initializers.contains(vi.name)) g.inputs.push_back(std::move(vi));
  }
  return g;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream ss;
  ss << '[';
  for (std::size_t k = 0; k < shape.size(); ++k) ss << (k ? "," : "") << shape[k];
  ss << ']';
  return ss.str();
}

Tensor Tensor::floats(Shape shape, std::vector<float> values) {
  Tensor t;
  t.kind = ElemKind::f32;
  t.shape = std::move(shape);
  t.f = values.empty() ? std::vector<float>(numel(t.shape)) : std::move(values);
  return t;
}

Tensor Tensor::ints(Shape shape, std::vector<std::int64_t> values) {
  Tensor t;
  t.kind = ElemKind::i64;
  t.shape = std::move(shape);
  t.i = values.empty() ? std::vector<std::int64_t>(numel(t.shape)) : std::move(values);
  return t;
}

Tensor Tensor::bools(Shape shape, std::vector<std::int64_t> values) {
  Tensor t = ints(std::move(shape), std::move(values));
  t.kind = ElemKind::boolean;
  return t;
}

const Attribute* Node::attr(const std::string& key) const {
  const auto it = attributes.find(key);
  return it == attributes.end() ? nullptr : &it->second;
}

std::int64_t Node::attr_int(const std::string& key, std::int64_t fallback) const {
  const auto* a = attr(key);
  return a ? a->i : fallback;
}

float Node::attr_float(const std::string& key, float fallback) const {
  const auto* a = attr(key);
  return a ? a->f : fallback;
}

std::string Node::attr_string(const std::string& key, const std::string& fallback) const {
  const auto* a = attr(key);
  return a ? a->s : fallback;
}

std::vector<std::int64_t> Node::attr_ints(const std::string& key) const {
  const auto* a = attr(key);
  return a ? a->ints : std::vector<std::int64_t>{};
}

const Graph* Node::attr_graph(const std::string& key) const {
  const auto* a = attr(key);
  return a ? a->g.get() : nullptr;
}

Model parse_model(std::span<const std::byte> bytes, const std::filesystem::path& base_dir) {
  if (bytes.empty()) throw ModelError("model file is empty");
  WireReader r(bytes);
  Model m;
  bool has_graph = false;
  while (!r.done()) {
    const auto f = r.next_field();
    switch (f.number) {
      case 1: m.ir_version = r.int64(); break;
      case 2: m.producer = r.string(); break;
      case 7:
        m.graph = parse_graph(r.bytes(), base_dir);
        has_graph = true;
        break;
      case 8: {
        WireReader op(r.bytes());
        std::string domain;
        std::int64_t version = 0;
        while (!op.done()) {
          const auto of = op.next_field();
          if (of.number == 1) domain = op.string();
          else if (of.number == 2) version = op.int64();
          else op.skip(of.type);
        }
        if (domain.empty() || domain == "ai.onnx") m.opset = version;
        break;
      }
      case 14: m.metadata.insert(parse_string_entry(r.bytes())); break;
      default: r.skip(f.type);
    }
  }
  if (!has_graph || m.graph.nodes.empty()) throw ModelError("model has no graph");
  if (m.ir_version <= 0) throw ModelError("model has no ir_version");
  return m;
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open model file: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_model(std::as_bytes(std::span(buf.data(), buf.size())), path.parent_path());
}

}  // namespace dmp3dad::onnx
