#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dmp3dad/cli.hpp"
#include "dmp3dad/synthetic.hpp"
#include "support.hpp"

using namespace dmp3dad;
using testing_support::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new TempDir;
    SyntheticOptions opts;
    opts.train_per_category = 4;
    opts.test_per_category = 3;
    opts.points = 384;
    write_synthetic_dataset(data_->path(), opts);
  }
  static void TearDownTestSuite() { delete data_; }

  static std::string manifest() { return (*data_ / "manifest.tsv").string(); }

  std::vector<std::string> evaluate_args(const std::filesystem::path& out) const {
    return {"evaluate", "--manifest", manifest(), "--backend", "mock", "--views", "5", "--refs", "1,3",
            "--seeds", "2", "--out", out.string(), "--quiet"};
  }

  static TempDir* data_;
};

TempDir* Cli::data_ = nullptr;

}  // namespace

TEST_F(Cli, EvaluateWritesReports) {
  TempDir out;
  const auto r = run(evaluate_args(out.path()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("sphere"), std::string::npos);
  const auto csv = slurp(out / "report.csv");
  EXPECT_TRUE(csv.starts_with("category,n_refs,mean_auroc,std_auroc,n_seeds\n"));
  EXPECT_EQ(count_lines(csv), 7u);
  EXPECT_TRUE(std::filesystem::exists(out / "report.summary"));
}

TEST_F(Cli, ExistingOutputsNeedForce) {
  TempDir out;
  ASSERT_EQ(run(evaluate_args(out.path())).code, 0);
  const auto first = slurp(out / "report.csv");
  const auto first_summary = slurp(out / "report.summary");

  const auto again = run(evaluate_args(out.path()));
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("already exists"), std::string::npos) << again.err;
  EXPECT_EQ(count_lines(again.err), 1u);

  auto forced = evaluate_args(out.path());
  forced.push_back("--force");
  ASSERT_EQ(run(forced).code, 0);
  EXPECT_EQ(slurp(out / "report.csv"), first);
  EXPECT_EQ(slurp(out / "report.summary"), first_summary);
}

TEST_F(Cli, WorkerCountDoesNotChangeOutput) {
  TempDir a, b;
  auto one = evaluate_args(a.path());
  one.insert(one.end(), {"--workers", "1"});
  auto four = evaluate_args(b.path());
  four.insert(four.end(), {"--workers", "4"});
  ASSERT_EQ(run(one).code, 0);
  ASSERT_EQ(run(four).code, 0);
  EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
  EXPECT_EQ(slurp(a / "report.summary"), slurp(b / "report.summary"));
}

TEST_F(Cli, KeepScoresWritesTablesAndReferenceSets) {
  TempDir out;
  auto args = evaluate_args(out.path());
  args.push_back("--keep-scores");
  ASSERT_EQ(run(args).code, 0);
  const auto table = slurp(out / "scores" / "cube_r3_s2.csv");
  EXPECT_TRUE(table.starts_with("source_id,true_label,score\n"));
  EXPECT_EQ(count_lines(table), 10u);
  const auto refs = slurp(out / "scores" / "cube_r3_s2.refs.json");
  EXPECT_NE(refs.find("\"view_weights\""), std::string::npos);
  EXPECT_NE(refs.find("\"gamma\": 0.2"), std::string::npos);
  EXPECT_NE(refs.find("cube_train_"), std::string::npos);
}

TEST_F(Cli, BackendConflictAndBadValues) {
  TempDir out;
  auto args = evaluate_args(out.path());
  args.insert(args.end(), {"--model", "x.onnx"});
  auto r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("conflicts"), std::string::npos) << r.err;

  args = evaluate_args(out.path());
  args.insert(args.end(), {"--gamma", "1.5"});
  EXPECT_NE(run(args).code, 0);

  args = evaluate_args(out.path());
  args.insert(args.end(), {"--views", "7"});
  EXPECT_NE(run(args).code, 0);

  args = evaluate_args(out.path());
  args.insert(args.end(), {"--metric", "chebyshev"});
  EXPECT_NE(run(args).code, 0);

  args = evaluate_args(out.path());
  args.insert(args.end(), {"--category", "torus"});
  r = run(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown category 'torus'"), std::string::npos) << r.err;

  r = run({"evaluate", "--manifest", manifest(), "--model", "/nonexistent/model.onnx", "--out",
           out.path().string(), "--quiet"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error: "), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out / "report.csv"));
}

TEST_F(Cli, UnknownFlagAndMissingSubcommand) {
  EXPECT_NE(run({"evaluate", "--manifest", manifest(), "--bogus"}).code, 0);
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"evaluate"}).code, 0);  // --manifest is required
}

TEST_F(Cli, HelpShowsDefaults) {
  const auto r = run({"evaluate", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* needle : {"--gamma", "0.2", "--refs", "--seeds", "10", "--views", "--workers",
                             "--backend", "ViT-B-32.onnx", "euclidean", "sum"}) {
    EXPECT_NE(r.out.find(needle), std::string::npos) << needle;
  }
}

TEST_F(Cli, AblateGammaSweep) {
  TempDir out;
  const auto r = run({"ablate", "--sweep", "gamma", "--manifest", manifest(), "--backend", "mock",
                      "--views", "5", "--refs", "1", "--seeds", "1", "--out", out.path().string(),
                      "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = slurp(out / "ablation.csv");
  EXPECT_EQ(count_lines(table), 11u);
  EXPECT_NE(table.find("gamma,\"gamma=0.1\",1,"), std::string::npos) << table;
  EXPECT_TRUE(std::filesystem::exists(out / "00_gamma-0.1" / "report.summary"));
  EXPECT_TRUE(std::filesystem::exists(out / "09_gamma-1.0" / "report.csv"));
  EXPECT_NE(run({"ablate", "--sweep", "depth", "--manifest", manifest(), "--backend", "mock"}).code, 0);
}

TEST_F(Cli, ReportPrintsStoredSummary) {
  TempDir out;
  ASSERT_EQ(run(evaluate_args(out.path())).code, 0);
  const auto from_dir = run({"report", out.path().string()});
  ASSERT_EQ(from_dir.code, 0) << from_dir.err;
  const auto from_file = run({"report", (out / "report.summary").string()});
  EXPECT_EQ(from_dir.out, from_file.out);
  EXPECT_NE(from_dir.out.find("cylinder"), std::string::npos);
  EXPECT_EQ(run({"report", (out / "nothing").string()}).code, 1);
}

TEST_F(Cli, FailuresListing) {
  const auto r = run({"failures", "--manifest", manifest(), "--backend", "mock", "--views", "5",
                      "--category", "sphere", "--refs", "2", "--k", "3", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.starts_with("# target sphere refs 2 seed 1 auroc ")) << r.out;
  std::size_t missed = 0, suspect = 0;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    missed += line.starts_with("missed_anomaly\t");
    suspect += line.starts_with("suspect_normal\t");
  }
  EXPECT_EQ(missed, 3u);
  EXPECT_EQ(suspect, 3u);
  EXPECT_EQ(run({"failures", "--manifest", manifest(), "--backend", "mock", "--quiet"}).code, 1);
}

TEST_F(Cli, RenderWritesPngPreviews) {
  TempDir out;
  const auto r = run({"render", "--manifest", manifest(), "--views", "5", "--category", "cube",
                      "--out", out.path().string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 5u);
  for (int v = 0; v < 5; ++v) {
    const auto png = slurp(out / "cube_train_0" / ("view_0" + std::to_string(v) + ".png"));
    EXPECT_EQ(png.substr(1, 3), "PNG");
  }
  EXPECT_EQ(run({"render", "--manifest", manifest(), "--views", "5", "--category", "cube", "--out",
                 out.path().string(), "--quiet"})
                .code,
            1);
}

TEST_F(Cli, EmbedPopulatesTheCache) {
  TempDir cache;
  const auto missing = run({"embed", "--manifest", manifest(), "--backend", "mock", "--quiet"});
  if (!std::getenv("DMP3DAD_CACHE")) EXPECT_EQ(missing.code, 1);
  const auto r = run({"embed", "--manifest", manifest(), "--backend", "mock", "--views", "5",
                      "--cache", cache.path().string(), "--category", "cube", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(cache / "mock-s0-c128" / "grid-v5")) {
    files += e.path().extension() == ".feat";
  }
  EXPECT_EQ(files, 7u);
}

TEST(CliSynth, WritesALoadableDataset) {
  TempDir out;
  const auto r = run({"synth", "--out", out.path().string(), "--train", "3", "--test", "2", "--points", "128",
                      "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, (out / "manifest.tsv").string() + "\n");
  EXPECT_EQ(count_lines(slurp(out / "manifest.tsv")), 16u);
  EXPECT_EQ(run({"synth", "--out", out.path().string(), "--quiet"}).code, 1);
  EXPECT_EQ(run({"synth", "--out", out.path().string(), "--train", "3", "--test", "2", "--points", "128",
                 "--force", "--quiet"})
                .code,
            0);
}
