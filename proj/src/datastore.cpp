#include "dmp3dad/datastore.hpp"

#include "dmp3dad/log.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "dmp3dad/error.hpp"
#include "dmp3dad/hash.hpp"
#include "dmp3dad/rng.hpp"

namespace dmp3dad {

namespace {

static_assert(std::endian::native == std::endian::little,
              "embedding files are written in host byte order");

constexpr char kMagic[8] = {'D', 'M', 'P', 'F', 'E', 'A', 'T', '1'};

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Cursor {
 public:
  explicit Cursor(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw ParseError("embedding file is truncated");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string get_string() { return std::string(take(get<std::uint32_t>())); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split tag: " + std::string(name));
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::vector<std::string> Manifest::category_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : categories) out.push_back(name);
  return out;
}

std::vector<const ManifestEntry*> Manifest::select(const std::string& category, Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.category == category && e.split == split) out.push_back(&e);
  }
  return out;
}

std::vector<const ManifestEntry*> Manifest::select(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == split) out.push_back(&e);
  }
  return out;
}

Manifest parse_manifest(std::string_view text, const std::filesystem::path& root, bool check_files) {
  Manifest m;
  m.root = root;
  std::vector<std::string> problems;
  std::map<std::string, int> columns;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  bool header_seen = false;

  while (!text.empty()) {
    const auto eol = text.find('\n');
    const std::string_view raw = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);

    if (!header_seen) {
      for (std::size_t k = 0; k < fields.size(); ++k) columns[std::string(trim(fields[k]))] = static_cast<int>(k);
      for (const char* required : {"sample_id", "category", "split", "path"}) {
        if (!columns.contains(required)) {
          throw ParseError(std::string("manifest header is missing column '") + required + "'");
        }
      }
      header_seen = true;
      continue;
    }

    const auto field = [&](const char* name) -> std::string {
      const auto it = columns.find(name);
      if (it == columns.end() || it->second >= static_cast<int>(fields.size())) return {};
      return std::string(trim(fields[it->second]));
    };
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() < 4) {
      problems.push_back(where + ": expected at least 4 tab-separated fields");
      continue;
    }

    ManifestEntry e;
    e.sample_id = field("sample_id");
    e.category = field("category");
    e.relative_path = field("path");
    e.path = root / e.relative_path;
    if (e.sample_id.empty() || e.category.empty() || e.relative_path.empty()) {
      problems.push_back(where + ": empty sample_id, category or path");
      continue;
    }
    if (!seen.insert(e.sample_id).second) {
      problems.push_back(where + ": duplicate sample_id '" + e.sample_id + "'");
      continue;
    }
    const std::string split = field("split");
    if (split != "train" && split != "test") {
      problems.push_back(where + ": unknown split tag '" + split + "' for " + e.sample_id);
      continue;
    }
    e.split = parse_split(split);
    std::string format = field("format");
    if (format.empty()) format = e.path.extension() == ".pts" ? "pts_text" : "xyz_binary";
    try {
      e.format = parse_cloud_format(format);
    } catch (const InvalidArgument&) {
      problems.push_back(where + ": unknown format '" + format + "' for " + e.sample_id);
      continue;
    }
    if (check_files && !std::filesystem::is_regular_file(e.path)) {
      problems.push_back(where + ": file not found for " + e.sample_id + ": " + e.path.string());
      continue;
    }
    auto& counts = m.categories[e.category];
    (e.split == Split::train ? counts.train : counts.test) += 1;
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw ParseError("manifest is empty");
  if (!problems.empty()) {
    std::string msg = "manifest has " + std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ParseError(msg);
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), check_files);
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest: " + path.string());
  out << "sample_id\tcategory\tsplit\tpath\tformat\n";
  for (const auto& e : manifest.entries) {
    out << e.sample_id << '\t' << e.category << '\t' << to_string(e.split) << '\t'
        << e.relative_path << '\t' << to_string(e.format) << '\n';
  }
}

PointCloud load_entry(const ManifestEntry& entry) {
  PointCloud cloud = load_point_cloud(entry.path, entry.format);
  cloud.source_id = entry.relative_path;
  return cloud;
}

CacheKey make_cache_key(const PointCloud& cloud, const std::string& grid_id,
                        const ProjectionParams& params, const std::string& backend_id) {
  Sha256 h;
  h.field(std::string_view("dmp3dad-cache-v1"));
  h.field(static_cast<std::int64_t>(cloud.points.size()));
  for (const auto& p : cloud.points) {
    h.field(p.x);
    h.field(p.y);
    h.field(p.z);
  }
  h.field(grid_id);
  h.field(static_cast<std::int64_t>(params.grid_resolution));
  h.field(static_cast<std::int64_t>(params.image_size));
  h.field(static_cast<std::int64_t>(params.densify_kernel));
  h.field(params.smooth_sigma);
  h.field(params.foreground_ceiling);
  h.field(backend_id);
  return {h.hex()};
}

std::string serialize_features(const FeatureMatrix& features, const std::string& backend_id,
                               const std::string& grid_id, const CacheKey& key) {
  std::string payload(reinterpret_cast<const char*>(features.values.data()),
                      features.values.size() * sizeof(float));
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.views));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(features.dim));
  put_string(out, backend_id);
  put_string(out, grid_id);
  put_string(out, key.hex);
  put<std::uint64_t>(out, fnv1a64(payload));
  out += payload;
  return out;
}

FeatureMatrix deserialize_features(std::string_view bytes, const std::string& backend_id,
                                   const std::string& grid_id, const CacheKey& key) {
  Cursor c(bytes);
  if (c.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ParseError("not an embedding file");
  }
  FeatureMatrix fm;
  fm.views = static_cast<int>(c.get<std::uint32_t>());
  fm.dim = static_cast<int>(c.get<std::uint32_t>());
  if (c.get_string() != backend_id) throw ParseError("embedding file backend id mismatch");
  if (c.get_string() != grid_id) throw ParseError("embedding file grid id mismatch");
  if (c.get_string() != key.hex) throw ParseError("embedding file key mismatch");
  const auto checksum = c.get<std::uint64_t>();
  const std::size_t n = static_cast<std::size_t>(fm.views) * fm.dim;
  if (c.remaining() != n * sizeof(float)) throw ParseError("embedding payload size mismatch");
  const auto payload = c.take(n * sizeof(float));
  if (fnv1a64(payload) != checksum) throw ParseError("embedding payload checksum mismatch");
  fm.values.resize(n);
  std::memcpy(fm.values.data(), payload.data(), payload.size());
  return fm;
}

std::filesystem::path EmbeddingCache::path_for(const std::string& backend_id,
                                               const std::string& grid_id,
                                               const CacheKey& key) const {
  return root_ / backend_id / grid_id / (key.hex + ".feat");
}

std::optional<FeatureMatrix> EmbeddingCache::load(const std::string& backend_id,
                                                  const std::string& grid_id, const CacheKey& key,
                                                  PipelineStats* stats) const {
  const auto path = path_for(backend_id, grid_id, key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_features(ss.str(), backend_id, grid_id, key);
  } catch (const ParseError& e) {
    logger().warn("corrupt cache entry {} ({}); recomputing", path.string(), e.what());
    if (stats) ++stats->corrupt;
    return std::nullopt;
  }
}

void EmbeddingCache::store(const std::string& backend_id, const std::string& grid_id,
                           const CacheKey& key, const FeatureMatrix& features) const {
  const auto path = path_for(backend_id, grid_id, key);
  std::filesystem::create_directories(path.parent_path());
  thread_local std::mt19937_64 salt{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(salt());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache file: " + tmp.string());
    const std::string bytes = serialize_features(features, backend_id, grid_id, key);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing cache file: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<std::filesystem::path> cache_root_from_env() {
  const char* v = std::getenv("DMP3DAD_CACHE");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

FeatureMatrix get_or_compute_embedding(const PointCloud& cloud, const ViewGrid& grid,
                                       const ProjectionParams& params,
                                       const EncoderBackend& backend,
                                       const EmbeddingCache* cache, PipelineStats* stats) {
  CacheKey key;
  if (cache != nullptr) {
    key = make_cache_key(cloud, grid.id, params, backend.id());
    if (auto hit = cache->load(backend.id(), grid.id, key, stats)) {
      if (stats) ++stats->hits;
      return std::move(*hit);
    }
    if (stats) ++stats->misses;
  }
  const NormalizedCloud normalized = normalize_to_unit_cube(cloud);
  const auto images = render_all_views(normalized.cloud, grid, params);
  if (stats) ++stats->renders;
  FeatureMatrix features = encode_views(images, backend);
  if (stats) ++stats->encodes;
  if (cache != nullptr) cache->store(backend.id(), grid.id, key, features);
  return features;
}

FeatureMatrix get_or_compute_embedding(const ManifestEntry& sample, const ViewGrid& grid,
                                       const ProjectionParams& params,
                                       const EncoderBackend& backend,
                                       const EmbeddingCache* cache, PipelineStats* stats) {
  return get_or_compute_embedding(load_entry(sample), grid, params, backend, cache, stats);
}

}  // namespace dmp3dad
