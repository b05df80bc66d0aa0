#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dmp3dad/encoder.hpp"
#include "dmp3dad/geometry.hpp"
#include "dmp3dad/projection.hpp"
#include "dmp3dad/viewgrid.hpp"

namespace dmp3dad {

enum class Split { train, test };

Split parse_split(std::string_view name);
std::string_view to_string(Split split);

struct ManifestEntry {
  std::string sample_id;
  std::string category;
  Split split = Split::train;
  std::string relative_path;  ///< as written in the manifest
  std::filesystem::path path; ///< resolved against the manifest directory
  CloudFormat format = CloudFormat::pts_text;
};

struct CategoryCounts {
  std::size_t train = 0;
  std::size_t test = 0;
};

/// Tab-separated dataset index. Header columns: sample_id, category, split,
/// path and (optionally) format. Lines starting with '#' are comments.
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::map<std::string, CategoryCounts> categories;  ///< sorted by name

  std::vector<std::string> category_names() const;
  /// Entries of one category and split, in manifest order.
  std::vector<const ManifestEntry*> select(const std::string& category, Split split) const;
  /// All entries of a split, in manifest order.
  std::vector<const ManifestEntry*> select(Split split) const;
};

/// Parses and validates a manifest. Every problem (duplicate id, unknown
/// split, unknown format, missing file) is collected and reported in one
/// ParseError.
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
Manifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                        bool check_files = true);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

PointCloud load_entry(const ManifestEntry& entry);

/// SHA-256 over the point coordinates, grid id, projection parameters and
/// backend id. Gamma, metric and aggregation are deliberately not part of it.
struct CacheKey {
  std::string hex;
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

CacheKey make_cache_key(const PointCloud& cloud, const std::string& grid_id,
                        const ProjectionParams& params, const std::string& backend_id);

struct PipelineStats {
  std::atomic<std::size_t> renders{0};  ///< samples rendered (all views)
  std::atomic<std::size_t> encodes{0};  ///< samples encoded (all views)
  std::atomic<std::size_t> hits{0};
  std::atomic<std::size_t> misses{0};
  std::atomic<std::size_t> corrupt{0};
};

/// Embedding files under <root>/<backend_id>/<grid_id>/<key>.feat.
/// Writes go through a temporary file and an atomic rename.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_for(const std::string& backend_id, const std::string& grid_id,
                                 const CacheKey& key) const;

  /// nullopt when absent. A corrupt file counts in `stats` and yields nullopt.
  std::optional<FeatureMatrix> load(const std::string& backend_id, const std::string& grid_id,
                                    const CacheKey& key, PipelineStats* stats = nullptr) const;
  void store(const std::string& backend_id, const std::string& grid_id, const CacheKey& key,
             const FeatureMatrix& features) const;

 private:
  std::filesystem::path root_;
};

/// Cache root from DMP3DAD_CACHE, if set.
std::optional<std::filesystem::path> cache_root_from_env();

/// Normalise -> render every view -> encode, unless the cache already holds
/// the result. `cache` may be null.
FeatureMatrix get_or_compute_embedding(const PointCloud& cloud, const ViewGrid& grid,
                                       const ProjectionParams& params,
                                       const EncoderBackend& backend,
                                       const EmbeddingCache* cache,
                                       PipelineStats* stats = nullptr);

FeatureMatrix get_or_compute_embedding(const ManifestEntry& sample, const ViewGrid& grid,
                                       const ProjectionParams& params,
                                       const EncoderBackend& backend,
                                       const EmbeddingCache* cache,
                                       PipelineStats* stats = nullptr);

/// Encoded embedding file bytes (header + little-endian float32 payload).
std::string serialize_features(const FeatureMatrix& features, const std::string& backend_id,
                               const std::string& grid_id, const CacheKey& key);
/// Throws ParseError on any inconsistency.
FeatureMatrix deserialize_features(std::string_view bytes, const std::string& backend_id,
                                   const std::string& grid_id, const CacheKey& key);

}  // namespace dmp3dad
