#include "dmp3dad/cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <thread>

#include "dmp3dad/datastore.hpp"
#include "dmp3dad/error.hpp"
#include "dmp3dad/evaluation.hpp"
#include "dmp3dad/log.hpp"
#include "dmp3dad/synthetic.hpp"

namespace dmp3dad::cli {

namespace {

struct RunConfig {
  std::string manifest;
  std::string cache;
  std::string backend = "model";
  std::string model = "ViT-B-32.onnx";
  int views = 10;
  double gamma = kDefaultGamma;
  std::string metric = "euclidean";
  std::string agg = "sum";
  std::vector<int> refs = {1, 3, 5};
  int seeds = 10;
  std::string category = "all";
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string out = "out";
  bool force = false;
  bool quiet = false;

  // subcommand specific
  std::string sweep;
  std::vector<std::string> backbones;
  std::string report_path;
  int seed = 1;
  int k = 5;
  int limit = 1;
  std::string input;
  bool keep_scores = false;
  SyntheticOptions synth;
};

struct Options {
  CLI::Option* model = nullptr;
};

Options add_pipeline_flags(CLI::App* sub, RunConfig& cfg) {
  Options o;
  sub->add_option("--manifest", cfg.manifest, "Dataset manifest (TSV)")->required();
  sub->add_option("--cache", cfg.cache, "Embedding cache root (default: $DMP3DAD_CACHE, else none)");
  sub->add_option("--backend", cfg.backend, "Encoder backend")
      ->check(CLI::IsMember({"mock", "model"}))
      ->capture_default_str();
  o.model = sub->add_option("--model", cfg.model, "ONNX image encoder (ViT-B/32 export)")
                ->capture_default_str();
  sub->add_option("--views", cfg.views, "Number of views")
      ->check(CLI::IsMember({5, 10, 20, 30}))
      ->capture_default_str();
  sub->add_option("--category", cfg.category, "Target category, or 'all'")->capture_default_str();
  sub->add_option("--workers", cfg.workers, "Worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_flag("--quiet", cfg.quiet, "Only print warnings and errors");
  return o;
}

void add_scoring_flags(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--gamma", cfg.gamma, "Validity threshold, 0 < gamma <= 1")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--metric", cfg.metric, "View distance")
      ->check(CLI::IsMember({"euclidean", "cosine", "manhattan"}))
      ->capture_default_str();
  sub->add_option("--agg", cfg.agg, "Reference aggregation")
      ->check(CLI::IsMember({"sum", "min", "mean"}))
      ->capture_default_str();
}

void add_protocol_flags(CLI::App* sub, RunConfig& cfg) {
  add_scoring_flags(sub, cfg);
  sub->add_option("--refs", cfg.refs, "Reference counts, comma separated")
      ->delimiter(',')
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--seeds", cfg.seeds, "Seeds 1..n per setting")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  sub->add_flag("--force", cfg.force, "Overwrite existing outputs");
}

std::optional<std::filesystem::path> cache_root(const RunConfig& cfg) {
  if (!cfg.cache.empty()) return std::filesystem::path(cfg.cache);
  return cache_root_from_env();
}

BackendPtr make_backend(const RunConfig& cfg, const Options& o) {
  if (cfg.backend == "mock") {
    if (o.model != nullptr && o.model->count() > 0) {
      throw InvalidArgument("--backend mock conflicts with --model");
    }
    return resolve_backend("mock");
  }
  return load_model_backend(cfg.model);
}

ProtocolConfig protocol_config(const RunConfig& cfg) {
  ProtocolConfig p;
  if (cfg.category != "all") p.categories = {cfg.category};
  p.n_refs = cfg.refs;
  p.seeds = cfg.seeds;
  p.views = cfg.views;
  p.gamma = cfg.gamma;
  check_gamma(p.gamma);
  p.metric = parse_metric(cfg.metric);
  p.aggregation = parse_aggregation(cfg.agg);
  return p;
}

std::vector<const ManifestEntry*> selected_entries(const Manifest& m, const std::string& category) {
  if (category != "all" && !m.categories.contains(category)) {
    throw InvalidArgument("unknown category '" + category + "'");
  }
  std::vector<const ManifestEntry*> out;
  for (const auto& e : m.entries) {
    if (category == "all" || e.category == category) out.push_back(&e);
  }
  return out;
}

std::string sanitize(std::string label) {
  for (char& c : label) {
    if (c == '=' || c == '/') c = '-';
    if (c == ' ') c = '_';
  }
  return label;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

// ---------------------------------------------------------------------------

int cmd_render(const RunConfig& cfg, std::ostream& out) {
  const ViewGrid grid = generate_view_grid(cfg.views);
  const ProjectionParams params;
  std::vector<std::pair<std::string, PointCloud>> clouds;
  if (!cfg.input.empty()) {
    const std::filesystem::path p(cfg.input);
    const CloudFormat fmt = p.extension() == ".pts" ? CloudFormat::pts_text : CloudFormat::xyz_binary;
    clouds.emplace_back(p.stem().string(), load_point_cloud(p, fmt));
  } else {
    if (cfg.manifest.empty()) throw InvalidArgument("render needs --manifest or --input");
    const Manifest m = load_manifest(cfg.manifest);
    std::map<std::string, int> taken;
    for (const auto* e : selected_entries(m, cfg.category)) {
      if (cfg.limit > 0 && taken[e->category] >= cfg.limit) continue;
      ++taken[e->category];
      clouds.emplace_back(e->sample_id, load_entry(*e));
    }
  }
  for (const auto& [id, cloud] : clouds) {
    const auto dir = std::filesystem::path(cfg.out) / id;
    if (std::filesystem::exists(dir) && !cfg.force) {
      throw InvalidArgument(dir.string() + " already exists (use --force to overwrite)");
    }
    std::filesystem::create_directories(dir);
    const auto images = render_all_views(normalize_to_unit_cube(cloud).cloud, grid, params);
    for (const auto& img : images) {
      const auto path = dir / fmt::format("view_{:02d}.png", img.view_index);
      write_png(img, path);
      out << path.string() << '\n';
    }
  }
  return 0;
}

int cmd_embed(const RunConfig& cfg, const Options& o) {
  const auto root = cache_root(cfg);
  if (!root) throw InvalidArgument("embed needs --cache or DMP3DAD_CACHE");
  const Manifest m = load_manifest(cfg.manifest);
  const BackendPtr backend = make_backend(cfg, o);
  Workspace ws(m, {}, root, cfg.workers);
  FeatureStore& store = ws.store(view_grid_id(cfg.views), backend);
  const auto entries = selected_entries(m, cfg.category);
  store.prefetch(entries);
  auto& s = ws.stats();
  logger().info("embedded {} sample(s) into {}: {} cached, {} computed, {} corrupt entries replaced",
                entries.size(), (*root / backend->id() / store.grid().id).string(), s.hits.load(),
                s.encodes.load(), s.corrupt.load());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const Manifest m = load_manifest(cfg.manifest);
  ProtocolConfig pc = protocol_config(cfg);
  pc.keep_trials = cfg.keep_scores;
  const std::filesystem::path dir(cfg.out);
  if (!cfg.force) {
    for (const char* name : {"report.csv", "report.summary"}) {
      if (std::filesystem::exists(dir / name)) {
        throw InvalidArgument((dir / name).string() + " already exists (use --force to overwrite)");
      }
    }
  }
  const BackendPtr backend = make_backend(cfg, o);
  Workspace ws(m, {}, cache_root(cfg), cfg.workers);
  const ProtocolReport report = run_protocol(pc, ws, backend);
  write_report(report, dir, cfg.force);
  if (cfg.keep_scores) {
    const auto scores = dir / "scores";
    std::filesystem::create_directories(scores);
    for (const auto& t : report.trials) {
      const auto stem = fmt::format("{}_r{}_s{}", t.spec.target_category, t.spec.n_refs, t.spec.seed);
      write_text(scores / (stem + ".csv"), score_table_csv(t));
      write_text(scores / (stem + ".refs.json"), reference_set_json(t));
    }
  }
  out << format_report(report);
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const Sweep sweep = parse_sweep(cfg.sweep);
  const Manifest m = load_manifest(cfg.manifest);
  const ProtocolConfig pc = protocol_config(cfg);
  const std::filesystem::path dir(cfg.out);
  if (!cfg.force && std::filesystem::exists(dir / "ablation.csv")) {
    throw InvalidArgument((dir / "ablation.csv").string() + " already exists (use --force to overwrite)");
  }
  BackendPtr backend;
  if (sweep != Sweep::backbone) backend = make_backend(cfg, o);
  std::vector<std::string> backbones = cfg.backbones;
  if (sweep == Sweep::backbone && backbones.empty()) {
    throw InvalidArgument("the backbone sweep needs --backbones");
  }
  Workspace ws(m, {}, cache_root(cfg), cfg.workers);
  const AblationResult result = run_ablation(sweep, pc, ws, backend, backbones);

  std::string table = "sweep,value,n_refs,mean_auroc,mean_std\n";
  for (std::size_t i = 0; i < result.reports.size(); ++i) {
    const auto& r = result.reports[i];
    write_report(r, dir / fmt::format("{:02d}_{}", i, sanitize(r.label)), cfg.force);
    for (const auto& row : r.overall) {
      table += fmt::format("{},\"{}\",{},{:.6f},{:.6f}\n", to_string(sweep), r.label, row.n_refs,
                           row.mean_auroc, row.mean_std);
    }
    out << format_report(r) << '\n';
  }
  for (const auto& s : result.skipped) out << "skipped backbone " << s << '\n';
  std::filesystem::create_directories(dir);
  write_text(dir / "ablation.csv", table);
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const std::filesystem::path dir(cfg.out);
  if (!cfg.force && std::filesystem::exists(dir / "manifest.tsv")) {
    throw InvalidArgument((dir / "manifest.tsv").string() + " already exists (use --force to overwrite)");
  }
  const Manifest m = write_synthetic_dataset(dir, cfg.synth);
  out << (dir / "manifest.tsv").string() << '\n';
  logger().info("wrote {} clouds in {} categories", m.entries.size(), m.categories.size());
  return 0;
}

int cmd_report(const RunConfig& cfg, std::ostream& out) {
  std::filesystem::path p(cfg.report_path);
  if (std::filesystem::is_directory(p)) p /= "report.summary";
  out << format_report(read_report_summary(p));
  return 0;
}

int cmd_failures(const RunConfig& cfg, const Options& o, std::ostream& out) {
  if (cfg.category == "all") throw InvalidArgument("failures needs --category <name>");
  if (cfg.refs.size() != 1) throw InvalidArgument("failures takes a single --refs value");
  const Manifest m = load_manifest(cfg.manifest);
  const BackendPtr backend = make_backend(cfg, o);
  Workspace ws(m, {}, cache_root(cfg), cfg.workers);
  TrialSpec spec;
  spec.target_category = cfg.category;
  spec.n_refs = cfg.refs.front();
  spec.seed = static_cast<std::uint64_t>(cfg.seed);
  spec.grid_id = view_grid_id(cfg.views);
  spec.gamma = cfg.gamma;
  spec.metric = parse_metric(cfg.metric);
  spec.aggregation = parse_aggregation(cfg.agg);
  const TrialResult result = run_trial(spec, m, ws.store(spec.grid_id, backend));
  const FailureListing f = list_failures(result, static_cast<std::size_t>(cfg.k));
  out << fmt::format("# target {} refs {} seed {} auroc {:.6f}\n", cfg.category, spec.n_refs,
                     spec.seed, result.auroc);
  out << "kind\tsample_id\tcategory\tscore\n";
  for (const auto& s : f.missed_anomalies) {
    out << fmt::format("missed_anomaly\t{}\t{}\t{:.9g}\n", s.sample_id, s.category, s.score);
  }
  for (const auto& s : f.suspect_normals) {
    out << fmt::format("suspect_normal\t{}\t{}\t{:.9g}\n", s.sample_id, s.category, s.score);
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Few-shot point cloud anomaly detection with multi-view depth projections", "dmp3dad"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dmp3dad 0.1.0");

  auto* render = app.add_subcommand("render", "Write PNG depth previews");
  render->add_option("--manifest", cfg.manifest, "Dataset manifest (TSV)");
  render->add_option("--input", cfg.input, "Single point cloud file (.pts text or binary xyz)");
  render->add_option("--views", cfg.views, "Number of views")
      ->check(CLI::IsMember({5, 10, 20, 30}))
      ->capture_default_str();
  render->add_option("--category", cfg.category, "Category, or 'all'")->capture_default_str();
  render->add_option("--limit", cfg.limit, "Samples per category (0: all)")->capture_default_str();
  render->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  render->add_flag("--force", cfg.force, "Overwrite existing previews");
  render->add_flag("--quiet", cfg.quiet, "Only print warnings and errors");

  auto* embed = app.add_subcommand("embed", "Populate the embedding cache");
  const Options embed_opts = add_pipeline_flags(embed, cfg);

  auto* evaluate = app.add_subcommand("evaluate", "Run the few-shot protocol and write a report");
  const Options eval_opts = add_pipeline_flags(evaluate, cfg);
  add_protocol_flags(evaluate, cfg);
  evaluate->add_flag("--keep-scores", cfg.keep_scores, "Also write per-trial score tables");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  const Options ablate_opts = add_pipeline_flags(ablate, cfg);
  add_protocol_flags(ablate, cfg);
  ablate->add_option("--sweep", cfg.sweep, "Sweep")
      ->required()
      ->check(CLI::IsMember({"gamma", "views", "metric", "backbone", "components"}));
  ablate->add_option("--backbones", cfg.backbones, "Model files for the backbone sweep")
      ->delimiter(',');

  auto* synth = app.add_subcommand("synth", "Write a synthetic sphere/cube/cylinder dataset");
  synth->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  synth->add_option("--train", cfg.synth.train_per_category, "Training clouds per category")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--test", cfg.synth.test_per_category, "Test clouds per category")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--points", cfg.synth.points, "Points per cloud")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--noise", cfg.synth.noise, "Surface noise std")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--seed", cfg.synth.seed, "Dataset seed")->capture_default_str();
  synth->add_flag("--force", cfg.force, "Overwrite an existing dataset");
  synth->add_flag("--quiet", cfg.quiet, "Only print warnings and errors");

  auto* report = app.add_subcommand("report", "Print a stored report");
  report->add_option("path", cfg.report_path, "Report directory or report.summary file")
      ->required();

  auto* failures = app.add_subcommand("failures", "List the worst-ranked samples of one trial");
  const Options fail_opts = add_pipeline_flags(failures, cfg);
  add_scoring_flags(failures, cfg);
  failures->add_option("--refs", cfg.refs, "Reference count")->capture_default_str();
  failures->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
  failures->add_option("--k", cfg.k, "Entries per list")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  if (failures->parsed() && failures->get_option("--refs")->count() == 0) cfg.refs = {5};
  set_log_level(cfg.quiet ? spdlog::level::warn : spdlog::level::info);
  try {
    if (render->parsed()) return cmd_render(cfg, out);
    if (embed->parsed()) return cmd_embed(cfg, embed_opts);
    if (evaluate->parsed()) return cmd_evaluate(cfg, eval_opts, out);
    if (ablate->parsed()) return cmd_ablate(cfg, ablate_opts, out);
    if (synth->parsed()) return cmd_synth(cfg, out);
    if (report->parsed()) return cmd_report(cfg, out);
    if (failures->parsed()) return cmd_failures(cfg, fail_opts, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace dmp3dad::cli
