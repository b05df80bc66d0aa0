#include "dmp3dad/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dmp3dad/error.hpp"
#include "dmp3dad/log.hpp"
#include "dmp3dad/parallel.hpp"
#include "dmp3dad/rng.hpp"

namespace dmp3dad {

namespace {

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

std::string format_gamma(double gamma) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", gamma);
  return buf;
}

}  // namespace

double compute_auroc(const std::vector<LabeledScore>& scores) {
  std::size_t positives = 0;
  for (const auto& s : scores) {
    if (std::isnan(s.score)) throw InvalidArgument("AUROC input contains a NaN score");
    if (s.label != kNormalLabel && s.label != kAnomalyLabel) {
      throw InvalidArgument("AUROC labels must be 0 (normal) or 1 (anomaly)");
    }
    positives += s.label == kAnomalyLabel;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw InvalidArgument("AUROC needs at least one normal and one anomalous sample");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Mid-ranks are half-integers, so every sum below is exact in double.
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]].score == scores[order[i]].score) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (scores[order[k]].label == kAnomalyLabel) positive_rank_sum += mid_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

// ---------------------------------------------------------------------------

FeatureStore::FeatureStore(ViewGrid grid, ProjectionParams params, BackendPtr backend,
                           std::string backend_id, std::optional<EmbeddingCache> cache,
                           int workers, PipelineStats* stats)
    : grid_(std::move(grid)),
      params_(params),
      backend_(std::move(backend)),
      backend_id_(std::move(backend_id)),
      cache_(std::move(cache)),
      workers_(std::max(1, workers)),
      stats_(stats) {
  validate(params_);
  if (backend_ && backend_id_ != backend_->id()) {
    throw InvalidArgument("backend id does not match the attached backend");
  }
}

std::shared_ptr<const FeatureMatrix> FeatureStore::features(const ManifestEntry& entry) {
  {
    std::lock_guard lock(mu_);
    const auto it = features_.find(entry.sample_id);
    if (it != features_.end()) return it->second;
  }
  const PointCloud cloud = load_entry(entry);
  const EmbeddingCache* cache = cache_ ? &*cache_ : nullptr;
  FeatureMatrix fm;
  if (backend_) {
    fm = get_or_compute_embedding(cloud, grid_, params_, *backend_, cache, stats_);
  } else {
    std::optional<FeatureMatrix> hit;
    if (cache != nullptr) {
      hit = cache->load(backend_id_, grid_.id, make_cache_key(cloud, grid_.id, params_, backend_id_),
                        stats_);
    }
    if (!hit) {
      throw MissingEmbedding("no cached embedding for " + entry.sample_id + " (backend " +
                             backend_id_ + ", " + grid_.id + ") and no encoder to compute it");
    }
    if (stats_) ++stats_->hits;
    fm = std::move(*hit);
  }
  if (fm.views != static_cast<int>(grid_.size())) {
    throw Error("embedding for " + entry.sample_id + " has " + std::to_string(fm.views) +
                " views, grid " + grid_.id + " has " + std::to_string(grid_.size()));
  }
  auto shared = std::make_shared<const FeatureMatrix>(std::move(fm));
  std::lock_guard lock(mu_);
  return features_.emplace(entry.sample_id, std::move(shared)).first->second;
}

std::vector<double> FeatureStore::reliabilities(const ManifestEntry& entry, double gamma) {
  check_gamma(gamma);
  const auto key = std::make_pair(entry.sample_id, gamma);
  {
    std::lock_guard lock(mu_);
    const auto it = reliabilities_.find(key);
    if (it != reliabilities_.end()) return it->second;
  }
  const NormalizedCloud normalized = normalize_to_unit_cube(load_entry(entry));
  std::vector<double> rel;
  rel.reserve(grid_.size());
  for (std::size_t v = 0; v < grid_.size(); ++v) {
    rel.push_back(compute_reliability(
        render_view(normalized.cloud, grid_.views[v], params_, static_cast<int>(v)), gamma));
  }
  std::lock_guard lock(mu_);
  return reliabilities_.emplace(key, std::move(rel)).first->second;
}

void FeatureStore::prefetch(const std::vector<const ManifestEntry*>& entries) {
  std::vector<const ManifestEntry*> missing;
  {
    std::lock_guard lock(mu_);
    std::set<std::string> seen;
    for (const auto* e : entries) {
      if (!features_.contains(e->sample_id) && seen.insert(e->sample_id).second) {
        missing.push_back(e);
      }
    }
  }
  if (!missing.empty()) {
    logger().info("computing {} embedding(s) for {}", missing.size(), grid_.id);
  }
  parallel_for(missing.size(), workers_, [&](std::size_t i) { features(*missing[i]); });
}

// ---------------------------------------------------------------------------

Workspace::Workspace(const Manifest& manifest, ProjectionParams params,
                     std::optional<std::filesystem::path> cache_root, int workers)
    : manifest_(manifest),
      params_(params),
      cache_root_(std::move(cache_root)),
      workers_(std::max(1, workers)) {
  validate(params_);
}

FeatureStore& Workspace::make_store(const std::string& grid_id, const BackendPtr& backend,
                                    const std::string& backend_id) {
  const std::string key = grid_id + '\n' + backend_id + (backend ? "" : "\n(cache-only)");
  auto it = stores_.find(key);
  if (it == stores_.end()) {
    std::optional<EmbeddingCache> cache;
    if (cache_root_) cache.emplace(*cache_root_);
    it = stores_
             .emplace(key, std::make_unique<FeatureStore>(view_grid_from_id(grid_id), params_,
                                                          backend, backend_id, std::move(cache),
                                                          workers_, &stats_))
             .first;
  }
  return *it->second;
}

FeatureStore& Workspace::store(const std::string& grid_id, const BackendPtr& backend) {
  if (!backend) throw InvalidArgument("store() needs a backend; use cache_only_store()");
  return make_store(grid_id, backend, backend->id());
}

FeatureStore& Workspace::cache_only_store(const std::string& grid_id,
                                          const std::string& backend_id) {
  return make_store(grid_id, nullptr, backend_id);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> draw_reference_indices(std::size_t population, std::size_t count,
                                                const std::string& category, std::uint64_t seed) {
  if (count > population) {
    throw InvalidArgument("cannot draw " + std::to_string(count) + " references from " +
                          std::to_string(population));
  }
  std::string tag = category;
  tag.push_back('\0');
  tag += std::to_string(seed);
  Xoshiro256 rng(fnv1a64(tag));
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

TrialResult run_trial(const TrialSpec& spec, const Manifest& manifest, FeatureStore& store) {
  if (spec.n_refs < 1) throw InvalidArgument("n_refs must be at least 1");
  check_gamma(spec.gamma);
  if (!manifest.categories.contains(spec.target_category)) {
    throw InvalidArgument("unknown target category '" + spec.target_category + "'");
  }
  if (spec.grid_id != store.grid().id) {
    throw InvalidArgument("trial grid " + spec.grid_id + " does not match store grid " +
                          store.grid().id);
  }
  if (!spec.backend_id.empty() && spec.backend_id != store.backend_id()) {
    throw InvalidArgument("trial backend " + spec.backend_id + " does not match store backend " +
                          store.backend_id());
  }
  const auto train = manifest.select(spec.target_category, Split::train);
  if (static_cast<std::size_t>(spec.n_refs) > train.size()) {
    throw InvalidArgument("insufficient training samples for '" + spec.target_category +
                          "': need " + std::to_string(spec.n_refs) + ", have " +
                          std::to_string(train.size()));
  }
  const auto tests = manifest.select(Split::test);

  TrialResult result;
  result.spec = spec;
  result.spec.backend_id = store.backend_id();

  std::vector<const ManifestEntry*> refs;
  for (std::size_t i : draw_reference_indices(train.size(), static_cast<std::size_t>(spec.n_refs),
                                              spec.target_category, spec.seed)) {
    refs.push_back(train[i]);
    result.reference_ids.push_back(train[i]->sample_id);
  }
  std::vector<const ManifestEntry*> needed = refs;
  needed.insert(needed.end(), tests.begin(), tests.end());
  store.prefetch(needed);

  const auto prepare = [&](const ManifestEntry& e) {
    auto fm = store.features(e);
    return spec.view_wise ? *fm : mean_pool_views(*fm);
  };

  ReferenceSet set;
  for (const auto* r : refs) set.members.push_back({r->sample_id, prepare(*r)});
  set.validate();

  if (!spec.view_wise) {
    result.weights = ViewWeights{{1.0}, spec.gamma};
  } else if (spec.view_weighting) {
    std::vector<std::vector<double>> rel;
    for (const auto* r : refs) rel.push_back(store.reliabilities(*r, spec.gamma));
    result.weights = effective_weights(view_weights_from_reliabilities(rel, spec.gamma));
  } else {
    result.weights = uniform_weights(store.grid().size(), spec.gamma);
  }

  result.scores.resize(tests.size());
  parallel_for(tests.size(), store.workers(), [&](std::size_t i) {
    const ManifestEntry& e = *tests[i];
    auto& out = result.scores[i];
    out.sample_id = e.sample_id;
    out.category = e.category;
    out.label = e.category == spec.target_category ? kNormalLabel : kAnomalyLabel;
    out.score = anomaly_score(prepare(e), set, result.weights, spec.metric, spec.aggregation);
  });

  std::vector<LabeledScore> labeled;
  labeled.reserve(result.scores.size());
  for (const auto& s : result.scores) labeled.push_back({s.label, s.score});
  result.auroc = compute_auroc(labeled);
  return result;
}

// ---------------------------------------------------------------------------

std::string ProtocolConfig::grid_id() const {
  return multi_view ? view_grid_id(views) : front_view_grid().id;
}

const OverallRow& ProtocolReport::overall_for(int n_refs) const {
  for (const auto& o : overall) {
    if (o.n_refs == n_refs) return o;
  }
  throw InvalidArgument("report has no results for n_refs=" + std::to_string(n_refs));
}

namespace {

ProtocolReport run_protocol_on(const ProtocolConfig& config, Workspace& workspace,
                               FeatureStore& store, std::string backbone) {
  const Manifest& manifest = workspace.manifest();
  if (manifest.categories.size() < 2) {
    throw InvalidArgument("the protocol needs a manifest with at least two categories");
  }
  if (config.seeds < 1) throw InvalidArgument("at least one seed is required");
  if (config.n_refs.empty()) throw InvalidArgument("at least one n_refs value is required");
  check_gamma(config.gamma);
  std::vector<std::string> categories = config.categories;
  if (categories.empty()) categories = manifest.category_names();
  for (const auto& c : categories) {
    if (!manifest.categories.contains(c)) throw InvalidArgument("unknown category '" + c + "'");
  }

  ProtocolReport report;
  report.config = config;
  report.config.categories = categories;
  report.backend_id = store.backend_id();
  report.backbone = std::move(backbone);

  for (const auto& category : categories) {
    logger().info("category {} ({} trials)", category,
                  config.n_refs.size() * static_cast<std::size_t>(config.seeds));
    for (int n : config.n_refs) {
      CategoryRow row;
      row.category = category;
      row.n_refs = n;
      for (int seed = 1; seed <= config.seeds; ++seed) {
        TrialSpec spec;
        spec.target_category = category;
        spec.n_refs = n;
        spec.seed = static_cast<std::uint64_t>(seed);
        spec.grid_id = store.grid().id;
        spec.gamma = config.gamma;
        spec.metric = config.metric;
        spec.aggregation = config.aggregation;
        spec.view_wise = config.view_wise;
        spec.view_weighting = config.view_weighting;
        TrialResult trial = run_trial(spec, manifest, store);
        row.seed_aurocs.push_back(trial.auroc);
        if (config.keep_trials) report.trials.push_back(std::move(trial));
      }
      row.mean_auroc = mean_of(row.seed_aurocs);
      row.std_auroc = population_std(row.seed_aurocs);
      report.rows.push_back(std::move(row));
    }
  }
  for (int n : config.n_refs) {
    std::vector<double> means;
    std::vector<double> stds;
    for (const auto& row : report.rows) {
      if (row.n_refs != n) continue;
      means.push_back(row.mean_auroc);
      stds.push_back(row.std_auroc);
    }
    report.overall.push_back({n, mean_of(means), mean_of(stds)});
  }
  return report;
}

}  // namespace

ProtocolReport run_protocol(const ProtocolConfig& config, Workspace& workspace,
                            const BackendPtr& backend) {
  return run_protocol_on(config, workspace, workspace.store(config.grid_id(), backend),
                         backend->backbone_name());
}

ProtocolReport run_protocol(const ProtocolConfig& config, Workspace& workspace,
                            const std::string& cached_backend_id) {
  return run_protocol_on(config, workspace,
                         workspace.cache_only_store(config.grid_id(), cached_backend_id), "");
}

// ---------------------------------------------------------------------------

Sweep parse_sweep(std::string_view name) {
  if (name == "gamma") return Sweep::gamma;
  if (name == "views") return Sweep::views;
  if (name == "metric") return Sweep::metric;
  if (name == "backbone") return Sweep::backbone;
  if (name == "components") return Sweep::components;
  throw InvalidArgument("unknown sweep '" + std::string(name) +
                        "' (expected gamma, views, metric, backbone or components)");
}

std::string_view to_string(Sweep sweep) {
  switch (sweep) {
    case Sweep::gamma: return "gamma";
    case Sweep::views: return "views";
    case Sweep::metric: return "metric";
    case Sweep::backbone: return "backbone";
    case Sweep::components: return "components";
  }
  return "?";
}

BackendPtr resolve_backend(const std::string& spec, int mock_dim) {
  if (spec == "mock") return make_mock_backend(0, mock_dim);
  if (spec.starts_with("mock:")) {
    const std::string seed = spec.substr(5);
    std::size_t used = 0;
    unsigned long long value = 0;
    try {
      value = std::stoull(seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (seed.empty() || used != seed.size()) {
      throw InvalidArgument("invalid mock backend seed in '" + spec + "'");
    }
    return make_mock_backend(value, mock_dim);
  }
  return load_model_backend(spec);
}

AblationResult run_ablation(Sweep sweep, const ProtocolConfig& base, Workspace& workspace,
                            const BackendPtr& backend, const std::vector<std::string>& backbones) {
  AblationResult out;
  out.sweep = sweep;
  const auto run = [&](ProtocolConfig cfg, const BackendPtr& b, std::string label) {
    logger().info("ablation {}: {}", to_string(sweep), label);
    ProtocolReport r = run_protocol(cfg, workspace, b);
    r.label = std::move(label);
    out.reports.push_back(std::move(r));
  };
  switch (sweep) {
    case Sweep::gamma:
      for (int i = 1; i <= 10; ++i) {
        ProtocolConfig cfg = base;
        cfg.gamma = i / 10.0;
        run(cfg, backend, "gamma=" + format_gamma(cfg.gamma));
      }
      break;
    case Sweep::views:
      for (int v : kSupportedViewCounts) {
        ProtocolConfig cfg = base;
        cfg.views = v;
        cfg.multi_view = true;
        run(cfg, backend, "views=" + std::to_string(v));
      }
      break;
    case Sweep::metric:
      for (auto m : {DistanceMetric::euclidean, DistanceMetric::cosine, DistanceMetric::manhattan}) {
        ProtocolConfig cfg = base;
        cfg.metric = m;
        run(cfg, backend, "metric=" + std::string(to_string(m)));
      }
      break;
    case Sweep::backbone: {
      if (backbones.empty()) throw InvalidArgument("the backbone sweep needs at least one model");
      std::vector<std::pair<std::string, BackendPtr>> loaded;
      for (const auto& spec : backbones) {
        try {
          loaded.emplace_back(spec, resolve_backend(spec));
        } catch (const Error& e) {
          logger().warn("skipping backbone {}: {}", spec, e.what());
          out.skipped.push_back(spec + ": " + e.what());
        }
      }
      for (const auto& [spec, b] : loaded) {
        const std::string name = b->backbone_name();
        run(base, b, "backbone=" + (name.empty() ? spec : name));
      }
      break;
    }
    case Sweep::components: {
      struct Row {
        bool mp, vs, vw;
      };
      for (const Row row : {Row{false, false, false}, Row{true, false, false},
                            Row{true, true, false}, Row{true, true, true}}) {
        ProtocolConfig cfg = base;
        cfg.multi_view = row.mp;
        cfg.view_wise = row.vs;
        cfg.view_weighting = row.vw;
        const auto mark = [](bool on) { return on ? "on" : "off"; };
        run(cfg, backend,
            std::string("MP=") + mark(row.mp) + " VS=" + mark(row.vs) + " VW=" + mark(row.vw));
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

FailureListing list_failures(const TrialResult& result, std::size_t k) {
  FailureListing out;
  for (const auto& s : result.scores) {
    (s.label == kAnomalyLabel ? out.missed_anomalies : out.suspect_normals).push_back(s);
  }
  std::sort(out.missed_anomalies.begin(), out.missed_anomalies.end(),
            [](const ScoredSample& a, const ScoredSample& b) {
              return a.score != b.score ? a.score < b.score : a.sample_id < b.sample_id;
            });
  std::sort(out.suspect_normals.begin(), out.suspect_normals.end(),
            [](const ScoredSample& a, const ScoredSample& b) {
              return a.score != b.score ? a.score > b.score : a.sample_id < b.sample_id;
            });
  if (out.missed_anomalies.size() > k) out.missed_anomalies.resize(k);
  if (out.suspect_normals.size() > k) out.suspect_normals.resize(k);
  return out;
}

}  // namespace dmp3dad
