#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmp3dad/datastore.hpp"
#include "dmp3dad/encoder.hpp"
#include "dmp3dad/scoring.hpp"
#include "dmp3dad/viewgrid.hpp"
#include "dmp3dad/weighting.hpp"

namespace dmp3dad {

/// Label of a scored test sample: the target category is 0, everything else 1.
inline constexpr int kNormalLabel = 0;
inline constexpr int kAnomalyLabel = 1;

struct LabeledScore {
  int label = 0;
  double score = 0.0;
};

/// Probability that a random anomaly outscores a random normal, ties counted
/// half (Mann-Whitney U via mid-ranks). Throws InvalidArgument unless both
/// labels occur.
double compute_auroc(const std::vector<LabeledScore>& scores);

/// Embeddings and reference reliabilities for one (grid, backend) pair,
/// memoised in memory on top of the on-disk cache. Thread-safe.
class FeatureStore {
 public:
  /// `backend` may be null: the store then only serves cached embeddings
  /// and throws MissingEmbedding for anything else.
  FeatureStore(ViewGrid grid, ProjectionParams params, BackendPtr backend, std::string backend_id,
               std::optional<EmbeddingCache> cache, int workers, PipelineStats* stats);

  const ViewGrid& grid() const { return grid_; }
  const ProjectionParams& params() const { return params_; }
  const std::string& backend_id() const { return backend_id_; }
  const BackendPtr& backend() const { return backend_; }
  int workers() const { return workers_; }

  std::shared_ptr<const FeatureMatrix> features(const ManifestEntry& entry);
  /// Fraction of valid pixels per view of this sample's renders.
  std::vector<double> reliabilities(const ManifestEntry& entry, double gamma);
  /// Computes all missing embeddings in parallel.
  void prefetch(const std::vector<const ManifestEntry*>& entries);

 private:
  ViewGrid grid_;
  ProjectionParams params_;
  BackendPtr backend_;
  std::string backend_id_;
  std::optional<EmbeddingCache> cache_;
  int workers_ = 1;
  PipelineStats* stats_ = nullptr;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const FeatureMatrix>> features_;
  std::map<std::pair<std::string, double>, std::vector<double>> reliabilities_;
};

/// Owns a manifest view plus one FeatureStore per (grid, backend).
class Workspace {
 public:
  Workspace(const Manifest& manifest, ProjectionParams params = {},
            std::optional<std::filesystem::path> cache_root = std::nullopt, int workers = 1);

  const Manifest& manifest() const { return manifest_; }
  const ProjectionParams& params() const { return params_; }
  int workers() const { return workers_; }
  PipelineStats& stats() { return stats_; }

  FeatureStore& store(const std::string& grid_id, const BackendPtr& backend);
  /// Store with no encoder: serves only what the cache already holds.
  FeatureStore& cache_only_store(const std::string& grid_id, const std::string& backend_id);

 private:
  FeatureStore& make_store(const std::string& grid_id, const BackendPtr& backend,
                           const std::string& backend_id);

  const Manifest& manifest_;
  ProjectionParams params_;
  std::optional<std::filesystem::path> cache_root_;
  int workers_;
  PipelineStats stats_;
  std::map<std::string, std::unique_ptr<FeatureStore>> stores_;
};

struct TrialSpec {
  std::string target_category;
  int n_refs = 5;
  std::uint64_t seed = 1;
  std::string grid_id = "grid-v10";
  double gamma = kDefaultGamma;
  DistanceMetric metric = DistanceMetric::euclidean;
  Aggregation aggregation = Aggregation::sum;
  std::string backend_id;  ///< empty: taken from the store
  bool view_wise = true;       ///< off: distance between mean-pooled features
  bool view_weighting = true;  ///< off: uniform 1/V weights
};

struct ScoredSample {
  std::string sample_id;
  std::string category;
  int label = 0;
  double score = 0.0;
};

struct TrialResult {
  TrialSpec spec;
  std::vector<std::string> reference_ids;
  ViewWeights weights;
  std::vector<ScoredSample> scores;  ///< test split, manifest order
  double auroc = 0.0;
};

/// Seeded draw of `count` distinct indices out of [0, population), in draw
/// order. The generator is seeded from (category, seed) only.
std::vector<std::size_t> draw_reference_indices(std::size_t population, std::size_t count,
                                                const std::string& category, std::uint64_t seed);

TrialResult run_trial(const TrialSpec& spec, const Manifest& manifest, FeatureStore& store);

struct ProtocolConfig {
  std::vector<std::string> categories;  ///< empty: every manifest category
  std::vector<int> n_refs = {1, 3, 5};
  int seeds = 10;  ///< seeds 1..seeds
  int views = 10;
  double gamma = kDefaultGamma;
  DistanceMetric metric = DistanceMetric::euclidean;
  Aggregation aggregation = Aggregation::sum;
  bool multi_view = true;  ///< off: single front view
  bool view_wise = true;
  bool view_weighting = true;
  bool keep_trials = false;

  std::string grid_id() const;
};

struct CategoryRow {
  std::string category;
  int n_refs = 0;
  std::vector<double> seed_aurocs;  ///< seed order
  double mean_auroc = 0.0;
  double std_auroc = 0.0;  ///< population std over seeds
};

struct OverallRow {
  int n_refs = 0;
  double mean_auroc = 0.0;  ///< unweighted mean of category means
  double mean_std = 0.0;    ///< unweighted mean of category stds
};

struct ProtocolReport {
  std::string label;
  ProtocolConfig config;
  std::string backend_id;
  std::string backbone;
  std::vector<CategoryRow> rows;  ///< category-major, then n_refs in config order
  std::vector<OverallRow> overall;
  std::vector<TrialResult> trials;  ///< only with keep_trials

  const OverallRow& overall_for(int n_refs) const;
};

/// Every category x n_refs x seed trial, aggregated. Needs >= 2 categories.
ProtocolReport run_protocol(const ProtocolConfig& config, Workspace& workspace,
                            const BackendPtr& backend);
/// Same, against cached embeddings only.
ProtocolReport run_protocol(const ProtocolConfig& config, Workspace& workspace,
                            const std::string& cached_backend_id);

enum class Sweep { gamma, views, metric, backbone, components };

Sweep parse_sweep(std::string_view name);
std::string_view to_string(Sweep sweep);

struct AblationResult {
  Sweep sweep = Sweep::gamma;
  std::vector<ProtocolReport> reports;  ///< one per sweep value, label = value
  std::vector<std::string> skipped;     ///< backbones that could not be loaded
};

/// "mock" or "mock:<seed>" gives the mock encoder, anything else is a model file.
BackendPtr resolve_backend(const std::string& spec, int mock_dim = 128);

/// Sweep values: gamma 0.1..1.0, views {5,10,20,30}, the three metrics, the
/// given backbone specs, or the four component rows
/// (none, MP, MP+VS, MP+VS+VW).
AblationResult run_ablation(Sweep sweep, const ProtocolConfig& base, Workspace& workspace,
                            const BackendPtr& backend,
                            const std::vector<std::string>& backbones = {});

struct FailureListing {
  std::vector<ScoredSample> missed_anomalies;  ///< lowest-scoring anomalies first
  std::vector<ScoredSample> suspect_normals;   ///< highest-scoring normals first
};

/// k lowest anomalies and k highest normals; shorter lists when a class has
/// fewer than k members.
FailureListing list_failures(const TrialResult& result, std::size_t k);

/// <dir>/report.csv and <dir>/report.summary. Throws if either exists and
/// `force` is false.
void write_report(const ProtocolReport& report, const std::filesystem::path& dir, bool force);
std::string report_csv(const ProtocolReport& report);
std::string report_summary_json(const ProtocolReport& report);
ProtocolReport read_report_summary(const std::filesystem::path& path);
/// Human-readable table.
std::string format_report(const ProtocolReport& report);
/// CSV with columns source_id,true_label,score.
std::string score_table_csv(const TrialResult& result);
/// The trial's reference ids together with the view weights and gamma they
/// were computed with, as JSON.
std::string reference_set_json(const TrialResult& result);

}  // namespace dmp3dad
