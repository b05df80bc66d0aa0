#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dmp3dad/error.hpp"
#include "dmp3dad/evaluation.hpp"
#include "dmp3dad/synthetic.hpp"
#include "support.hpp"

using namespace dmp3dad;
using testing_support::TempDir;

namespace {

// Pairwise count over all (anomaly, normal) pairs, ties counting half.
double pairwise_auroc(const std::vector<LabeledScore>& s) {
  double wins = 0, pairs = 0;
  for (const auto& a : s) {
    if (a.label != kAnomalyLabel) continue;
    for (const auto& n : s) {
      if (n.label != kNormalLabel) continue;
      pairs += 1;
      wins += a.score > n.score ? 1.0 : a.score == n.score ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

ProtocolConfig quick_config() {
  ProtocolConfig c;
  c.n_refs = {1, 3};
  c.seeds = 2;
  c.views = 5;
  return c;
}

class SyntheticData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    SyntheticOptions opts;
    opts.train_per_category = 6;
    opts.test_per_category = 4;
    opts.points = 512;
    manifest_ = new Manifest(write_synthetic_dataset(dir_->path(), opts));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static TempDir* dir_;
  static Manifest* manifest_;
};

TempDir* SyntheticData::dir_ = nullptr;
Manifest* SyntheticData::manifest_ = nullptr;

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_EQ(compute_auroc({{0, 0.1}, {0, 0.2}, {1, 0.8}, {1, 0.9}}), 1.0);
  EXPECT_EQ(compute_auroc({{0, 0.8}, {0, 0.9}, {1, 0.1}, {1, 0.2}}), 0.0);
  EXPECT_EQ(compute_auroc({{0, 0.5}, {1, 0.5}}), 0.5);
  EXPECT_EQ(compute_auroc({{0, 0.1}, {0, 0.5}, {1, 0.5}, {1, 0.9}}), 0.875);
}

TEST(Auroc, RejectsBadInput) {
  EXPECT_THROW(compute_auroc({{0, 0.1}, {0, 0.2}}), InvalidArgument);
  EXPECT_THROW(compute_auroc({{1, 0.1}}), InvalidArgument);
  EXPECT_THROW(compute_auroc({}), InvalidArgument);
  EXPECT_THROW(compute_auroc({{0, 0.1}, {1, std::nan("")}}), InvalidArgument);
  EXPECT_THROW(compute_auroc({{0, 0.1}, {2, 0.3}}), InvalidArgument);
}

TEST(Auroc, MatchesPairwiseCountAndIsRankInvariant) {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(gen() % 60);
    std::vector<LabeledScore> s;
    for (int i = 0; i < n; ++i) {
      // coarse grid of scores so ties are common
      s.push_back({static_cast<int>(gen() % 2), static_cast<double>(gen() % 7)});
    }
    s[0].label = kNormalLabel;
    s[1].label = kAnomalyLabel;
    const double a = compute_auroc(s);
    EXPECT_NEAR(a, pairwise_auroc(s), 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);

    auto transformed = s;
    for (auto& x : transformed) x.score = std::exp(0.3 * x.score) + 5.0;
    EXPECT_NEAR(compute_auroc(transformed), a, 1e-12);
    auto flipped = s;
    for (auto& x : flipped) x.label = 1 - x.label;
    EXPECT_NEAR(compute_auroc(flipped), 1.0 - a, 1e-12);
    std::shuffle(transformed.begin(), transformed.end(), gen);
    EXPECT_NEAR(compute_auroc(transformed), a, 1e-12);
  }
}

TEST(ReferenceDraw, SeededDistinctAndCategorySpecific) {
  const auto a = draw_reference_indices(30, 5, "airplane", 1);
  EXPECT_EQ(a, draw_reference_indices(30, 5, "airplane", 1));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 5u);
  for (auto i : a) EXPECT_LT(i, 30u);
  EXPECT_NE(a, draw_reference_indices(30, 5, "airplane", 2));
  EXPECT_NE(a, draw_reference_indices(30, 5, "chair", 1));
  // Smaller draws are prefixes of larger ones.
  const auto b = draw_reference_indices(30, 3, "airplane", 1);
  EXPECT_TRUE(std::equal(b.begin(), b.end(), a.begin()));
  const auto all = draw_reference_indices(7, 7, "x", 3);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 7u);
  EXPECT_THROW(draw_reference_indices(3, 4, "x", 1), InvalidArgument);
}

TEST_F(SyntheticData, TrialIsDeterministicAndWellFormed) {
  Workspace ws(*manifest_);
  auto& store = ws.store("grid-v5", make_mock_backend(0, 32));
  TrialSpec spec;
  spec.target_category = "sphere";
  spec.n_refs = 3;
  spec.grid_id = "grid-v5";
  const auto a = run_trial(spec, *manifest_, store);
  const auto b = run_trial(spec, *manifest_, store);
  EXPECT_EQ(a.reference_ids, b.reference_ids);
  EXPECT_EQ(a.auroc, b.auroc);
  ASSERT_EQ(a.scores.size(), 12u);
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    EXPECT_EQ(a.scores[i].score, b.scores[i].score);
    EXPECT_EQ(a.scores[i].label, a.scores[i].category == "sphere" ? kNormalLabel : kAnomalyLabel);
  }
  EXPECT_EQ(a.reference_ids.size(), 3u);
  for (const auto& id : a.reference_ids) EXPECT_TRUE(id.starts_with("sphere_train_"));
  EXPECT_EQ(a.weights.size(), 5u);
  EXPECT_EQ(a.spec.backend_id, "mock-s0-c32");
  EXPECT_GT(a.auroc, 0.9);
}

TEST_F(SyntheticData, WeightsAreMeanReferenceReliabilities) {
  Workspace ws(*manifest_);
  auto& store = ws.store("grid-v5", make_mock_backend(0, 32));
  TrialSpec spec{.target_category = "cube", .n_refs = 2, .seed = 4, .grid_id = "grid-v5", .gamma = 0.5};
  const auto r = run_trial(spec, *manifest_, store);
  const auto train = manifest_->select("cube", Split::train);
  std::vector<std::vector<DepthImage>> renders;
  for (const auto& id : r.reference_ids) {
    const auto it = std::find_if(train.begin(), train.end(), [&](auto* e) { return e->sample_id == id; });
    ASSERT_NE(it, train.end());
    renders.push_back(render_all_views(normalize_to_unit_cube(load_entry(**it)).cloud,
                                       generate_view_grid(5), {}));
  }
  const auto expected = compute_view_weights(renders, 0.5);
  for (int v = 0; v < 5; ++v) EXPECT_NEAR(r.weights.weights[v], expected.weights[v], 1e-12);
}

TEST_F(SyntheticData, ScoresMatchDirectRecomputation) {
  Workspace ws(*manifest_);
  const auto backend = make_mock_backend(0, 32);
  auto& store = ws.store("grid-v5", backend);
  TrialSpec spec{.target_category = "cylinder", .n_refs = 3, .seed = 2, .grid_id = "grid-v5"};
  const auto r = run_trial(spec, *manifest_, store);

  const auto grid = generate_view_grid(5);
  const auto embed = [&](const std::string& id) {
    for (const auto& e : manifest_->entries) {
      if (e.sample_id == id) return get_or_compute_embedding(e, grid, {}, *backend, nullptr);
    }
    throw std::runtime_error("no such sample " + id);
  };
  ReferenceSet refs;
  for (const auto& id : r.reference_ids) refs.members.push_back({id, embed(id)});
  for (const auto& s : r.scores) {
    EXPECT_EQ(anomaly_score(embed(s.sample_id), refs, r.weights, DistanceMetric::euclidean), s.score)
        << s.sample_id;
  }
}

TEST_F(SyntheticData, AllTrainingSamplesAsReferences) {
  Workspace ws(*manifest_);
  auto& store = ws.store("grid-v5", make_mock_backend(0, 32));
  TrialSpec spec{.target_category = "cube", .n_refs = 6, .seed = 1, .grid_id = "grid-v5"};
  const auto r1 = run_trial(spec, *manifest_, store);
  spec.seed = 9;
  const auto r9 = run_trial(spec, *manifest_, store);
  // Same reference set in a different order: identical scores up to summation order.
  EXPECT_EQ(std::set<std::string>(r1.reference_ids.begin(), r1.reference_ids.end()),
            std::set<std::string>(r9.reference_ids.begin(), r9.reference_ids.end()));
  for (std::size_t i = 0; i < r1.scores.size(); ++i) EXPECT_NEAR(r1.scores[i].score, r9.scores[i].score, 1e-9);
  EXPECT_EQ(r1.auroc, r9.auroc);

  spec.n_refs = 7;
  try {
    run_trial(spec, *manifest_, store);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient training samples"), std::string::npos);
  }
}

TEST_F(SyntheticData, TrialValidation) {
  Workspace ws(*manifest_);
  auto& store = ws.store("grid-v5", make_mock_backend(0, 32));
  TrialSpec spec{.target_category = "torus", .grid_id = "grid-v5"};
  EXPECT_THROW(run_trial(spec, *manifest_, store), InvalidArgument);
  spec.target_category = "cube";
  spec.n_refs = 0;
  EXPECT_THROW(run_trial(spec, *manifest_, store), InvalidArgument);
  spec.n_refs = 1;
  spec.gamma = 0.0;
  EXPECT_THROW(run_trial(spec, *manifest_, store), InvalidArgument);
  spec.gamma = 0.2;
  spec.grid_id = "grid-v10";
  EXPECT_THROW(run_trial(spec, *manifest_, store), InvalidArgument);
  spec.grid_id = "grid-v5";
  spec.backend_id = "other";
  EXPECT_THROW(run_trial(spec, *manifest_, store), InvalidArgument);
}

TEST_F(SyntheticData, ComponentSwitches) {
  Workspace ws(*manifest_);
  auto& store = ws.store("grid-v5", make_mock_backend(0, 32));
  TrialSpec spec{.target_category = "sphere", .n_refs = 2, .grid_id = "grid-v5"};
  spec.view_weighting = false;
  const auto uniform = run_trial(spec, *manifest_, store);
  for (double w : uniform.weights.weights) EXPECT_EQ(w, 0.2);
  spec.view_wise = false;
  const auto pooled = run_trial(spec, *manifest_, store);
  EXPECT_EQ(pooled.weights.weights, std::vector<double>{1.0});
  EXPECT_EQ(pooled.reference_ids, uniform.reference_ids);
}

TEST_F(SyntheticData, ProtocolShapeAndAggregates) {
  Workspace ws(*manifest_);
  auto cfg = quick_config();
  cfg.keep_trials = true;
  const auto report = run_protocol(cfg, ws, make_mock_backend(0, 32));
  ASSERT_EQ(report.rows.size(), 6u);
  EXPECT_EQ(report.rows[0].category, "cube");
  EXPECT_EQ(report.rows[0].n_refs, 1);
  EXPECT_EQ(report.rows[1].n_refs, 3);
  EXPECT_EQ(report.rows[5].category, "sphere");
  EXPECT_EQ(report.trials.size(), 12u);
  EXPECT_EQ(report.backbone, "mock");
  for (const auto& row : report.rows) {
    ASSERT_EQ(row.seed_aurocs.size(), 2u);
    const double mean = (row.seed_aurocs[0] + row.seed_aurocs[1]) / 2;
    EXPECT_DOUBLE_EQ(row.mean_auroc, mean);
    EXPECT_DOUBLE_EQ(row.std_auroc, std::abs(row.seed_aurocs[0] - row.seed_aurocs[1]) / 2);
  }
  for (int n : {1, 3}) {
    double m = 0, s = 0;
    for (const auto& row : report.rows) {
      if (row.n_refs == n) {
        m += row.mean_auroc / 3;
        s += row.std_auroc / 3;
      }
    }
    EXPECT_NEAR(report.overall_for(n).mean_auroc, m, 1e-15);
    EXPECT_NEAR(report.overall_for(n).mean_std, s, 1e-15);
  }
  EXPECT_THROW(report.overall_for(5), InvalidArgument);
  // Synthetic shapes are trivially separable.
  for (const auto& o : report.overall) EXPECT_GE(o.mean_auroc, 0.95);
}

TEST_F(SyntheticData, ProtocolNeedsTwoCategories) {
  TempDir dir;
  write_synthetic_dataset(dir.path(), {2, 2, 64, 0.01, 1});
  const auto full = load_manifest(dir / "manifest.tsv");
  Manifest one = full;
  one.entries.erase(std::remove_if(one.entries.begin(), one.entries.end(),
                                   [](const ManifestEntry& e) { return e.category != "cube"; }),
                    one.entries.end());
  one.categories = {{"cube", full.categories.at("cube")}};
  Workspace ws(one);
  EXPECT_THROW(run_protocol(quick_config(), ws, make_mock_backend(0, 16)), InvalidArgument);

  // Two categories give two rows per n_refs.
  Manifest two = full;
  two.entries.erase(std::remove_if(two.entries.begin(), two.entries.end(),
                                   [](const ManifestEntry& e) { return e.category == "sphere"; }),
                    two.entries.end());
  two.categories.erase("sphere");
  Workspace ws2(two);
  auto cfg = quick_config();
  cfg.n_refs = {1};
  EXPECT_EQ(run_protocol(cfg, ws2, make_mock_backend(0, 16)).rows.size(), 2u);
}

TEST_F(SyntheticData, WorkerCountDoesNotChangeResults) {
  Workspace serial(*manifest_, {}, std::nullopt, 1);
  Workspace pooled(*manifest_, {}, std::nullopt, 4);
  const auto backend = make_mock_backend(0, 32);
  const auto a = run_protocol(quick_config(), serial, backend);
  const auto b = run_protocol(quick_config(), pooled, backend);
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_EQ(report_summary_json(a), report_summary_json(b));
}

TEST_F(SyntheticData, CacheOnlyStoreServesOnlyCachedEmbeddings) {
  TempDir cache;
  const auto backend = make_mock_backend(0, 32);
  {
    Workspace ws(*manifest_, {}, cache.path());
    run_protocol(quick_config(), ws, backend);
  }
  Workspace cached(*manifest_, {}, cache.path());
  const auto from_cache = run_protocol(quick_config(), cached, backend->id());
  Workspace fresh(*manifest_);
  const auto computed = run_protocol(quick_config(), fresh, backend);
  for (std::size_t i = 0; i < computed.rows.size(); ++i) {
    EXPECT_EQ(from_cache.rows[i].seed_aurocs, computed.rows[i].seed_aurocs);
  }
  EXPECT_EQ(cached.stats().encodes, 0u);

  Workspace empty(*manifest_, {}, cache.path());
  auto cfg = quick_config();
  cfg.views = 10;
  EXPECT_THROW(run_protocol(cfg, empty, backend->id()), MissingEmbedding);
}

TEST_F(SyntheticData, GammaDoesNotInvalidateTheCache) {
  TempDir cache;
  Workspace ws(*manifest_, {}, cache.path());
  const auto backend = make_mock_backend(0, 32);
  auto cfg = quick_config();
  run_protocol(cfg, ws, backend);
  const std::size_t encodes = ws.stats().encodes;
  Workspace again(*manifest_, {}, cache.path());
  cfg.gamma = 0.7;
  cfg.metric = DistanceMetric::cosine;
  cfg.aggregation = Aggregation::min;
  run_protocol(cfg, again, backend);
  EXPECT_EQ(again.stats().encodes, 0u);
  EXPECT_GT(encodes, 0u);
}

TEST_F(SyntheticData, AblationSweeps) {
  Workspace ws(*manifest_);
  const auto backend = make_mock_backend(0, 32);
  auto cfg = quick_config();
  cfg.n_refs = {1};
  cfg.seeds = 1;

  const auto gamma = run_ablation(Sweep::gamma, cfg, ws, backend);
  ASSERT_EQ(gamma.reports.size(), 10u);
  EXPECT_EQ(gamma.reports[0].label, "gamma=0.1");
  EXPECT_EQ(gamma.reports[9].label, "gamma=1.0");
  EXPECT_EQ(gamma.reports[2].config.gamma, 0.3);

  const auto comps = run_ablation(Sweep::components, cfg, ws, backend);
  ASSERT_EQ(comps.reports.size(), 4u);
  EXPECT_EQ(comps.reports[0].label, "MP=off VS=off VW=off");
  EXPECT_EQ(comps.reports[3].label, "MP=on VS=on VW=on");
  EXPECT_EQ(comps.reports[0].config.grid_id(), "grid-front");

  const auto metrics = run_ablation(Sweep::metric, cfg, ws, backend);
  ASSERT_EQ(metrics.reports.size(), 3u);
  EXPECT_EQ(metrics.reports[1].label, "metric=cosine");

  const auto bb = run_ablation(Sweep::backbone, cfg, ws, backend, {"mock:3", "/nonexistent/model.onnx"});
  ASSERT_EQ(bb.reports.size(), 1u);
  ASSERT_EQ(bb.skipped.size(), 1u);
  EXPECT_NE(bb.skipped[0].find("/nonexistent/model.onnx"), std::string::npos);
  EXPECT_EQ(bb.reports[0].backend_id, "mock-s3-c128");
  EXPECT_THROW(run_ablation(Sweep::backbone, cfg, ws, backend, {}), InvalidArgument);

  EXPECT_EQ(parse_sweep("views"), Sweep::views);
  EXPECT_THROW(parse_sweep("depth"), InvalidArgument);
}

TEST(ResolveBackend, Specs) {
  EXPECT_EQ(resolve_backend("mock")->id(), "mock-s0-c128");
  EXPECT_EQ(resolve_backend("mock:17", 64)->id(), "mock-s17-c64");
  EXPECT_THROW(resolve_backend("mock:x"), InvalidArgument);
  EXPECT_THROW(resolve_backend("mock:"), InvalidArgument);
  EXPECT_THROW(resolve_backend("/nonexistent.onnx"), ModelError);
}

TEST(ListFailures, OrderingAndTruncation) {
  TrialResult r;
  r.scores = {{"a1", "x", kAnomalyLabel, 0.4}, {"a2", "x", kAnomalyLabel, 0.1},
              {"a3", "x", kAnomalyLabel, 0.1}, {"n1", "y", kNormalLabel, 0.2},
              {"n2", "y", kNormalLabel, 0.9}, {"n3", "y", kNormalLabel, 0.5}};
  const auto f = list_failures(r, 2);
  ASSERT_EQ(f.missed_anomalies.size(), 2u);
  EXPECT_EQ(f.missed_anomalies[0].sample_id, "a2");
  EXPECT_EQ(f.missed_anomalies[1].sample_id, "a3");
  ASSERT_EQ(f.suspect_normals.size(), 2u);
  EXPECT_EQ(f.suspect_normals[0].sample_id, "n2");
  EXPECT_EQ(f.suspect_normals[1].sample_id, "n3");
  const auto all = list_failures(r, 10);
  EXPECT_EQ(all.missed_anomalies.size(), 3u);
  EXPECT_EQ(all.suspect_normals.size(), 3u);
}

TEST_F(SyntheticData, ReportRoundTrip) {
  Workspace ws(*manifest_);
  auto report = run_protocol(quick_config(), ws, make_mock_backend(0, 32));
  report.label = "baseline";
  TempDir out;
  write_report(report, out.path(), false);
  EXPECT_THROW(write_report(report, out.path(), false), Error);
  write_report(report, out.path(), true);

  const auto back = read_report_summary(out / "report.summary");
  EXPECT_EQ(back.label, "baseline");
  EXPECT_EQ(back.backend_id, report.backend_id);
  EXPECT_EQ(back.config.n_refs, report.config.n_refs);
  EXPECT_EQ(back.config.grid_id(), report.config.grid_id());
  ASSERT_EQ(back.rows.size(), report.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].seed_aurocs, report.rows[i].seed_aurocs);
    EXPECT_EQ(back.rows[i].mean_auroc, report.rows[i].mean_auroc);
  }
  EXPECT_EQ(report_summary_json(back), report_summary_json(report));

  const std::string csv = report_csv(report);
  EXPECT_TRUE(csv.starts_with("category,n_refs,mean_auroc,std_auroc,n_seeds\n"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_NE(format_report(report).find("cube"), std::string::npos);
}

TEST(ScoreTable, Columns) {
  TrialResult r;
  r.scores = {{"a", "x", kNormalLabel, 0.25}, {"b", "y", kAnomalyLabel, 1.5}};
  const auto csv = score_table_csv(r);
  EXPECT_TRUE(csv.starts_with("source_id,true_label,score\n")) << csv;
  EXPECT_NE(csv.find("a,0,"), std::string::npos);
  EXPECT_NE(csv.find("b,1,"), std::string::npos);
}
