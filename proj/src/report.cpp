#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

#include "dmp3dad/error.hpp"
#include "dmp3dad/evaluation.hpp"

namespace dmp3dad {

namespace {

using nlohmann::json;

json config_to_json(const ProtocolConfig& c) {
  return json{{"categories", c.categories},
              {"n_refs", c.n_refs},
              {"seeds", c.seeds},
              {"views", c.views},
              {"grid", c.grid_id()},
              {"gamma", c.gamma},
              {"metric", std::string(to_string(c.metric))},
              {"aggregation", std::string(to_string(c.aggregation))},
              {"multi_view", c.multi_view},
              {"view_wise", c.view_wise},
              {"view_weighting", c.view_weighting}};
}

ProtocolConfig config_from_json(const json& j) {
  ProtocolConfig c;
  c.categories = j.at("categories").get<std::vector<std::string>>();
  c.n_refs = j.at("n_refs").get<std::vector<int>>();
  c.seeds = j.at("seeds").get<int>();
  c.views = j.at("views").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.metric = parse_metric(j.at("metric").get<std::string>());
  c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  c.multi_view = j.at("multi_view").get<bool>();
  c.view_wise = j.at("view_wise").get<bool>();
  c.view_weighting = j.at("view_weighting").get<bool>();
  return c;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string report_csv(const ProtocolReport& report) {
  std::string out = "category,n_refs,mean_auroc,std_auroc,n_seeds\n";
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{}\n", r.category, r.n_refs, r.mean_auroc,
                       r.std_auroc, r.seed_aurocs.size());
  }
  return out;
}

std::string report_summary_json(const ProtocolReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"category", r.category},
                    {"n_refs", r.n_refs},
                    {"mean_auroc", r.mean_auroc},
                    {"std_auroc", r.std_auroc},
                    {"seed_aurocs", r.seed_aurocs}});
  }
  json overall = json::array();
  for (const auto& o : report.overall) {
    overall.push_back({{"n_refs", o.n_refs}, {"mean_auroc", o.mean_auroc}, {"mean_std", o.mean_std}});
  }
  const json doc{{"format", "dmp3dad-report-1"},
                 {"label", report.label},
                 {"backend_id", report.backend_id},
                 {"backbone", report.backbone},
                 {"config", config_to_json(report.config)},
                 {"rows", rows},
                 {"overall", overall}};
  return doc.dump(2) + "\n";
}

void write_report(const ProtocolReport& report, const std::filesystem::path& dir, bool force) {
  const auto csv = dir / "report.csv";
  const auto summary = dir / "report.summary";
  if (!force) {
    for (const auto& p : {csv, summary}) {
      if (std::filesystem::exists(p)) {
        throw InvalidArgument(p.string() + " already exists (use --force to overwrite)");
      }
    }
  }
  std::filesystem::create_directories(dir);
  write_file(csv, report_csv(report));
  write_file(summary, report_summary_json(report));
}

ProtocolReport read_report_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open report summary: " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.value("format", "") != "dmp3dad-report-1") {
      throw ParseError("not a report summary: " + path.string());
    }
    ProtocolReport r;
    r.label = doc.at("label").get<std::string>();
    r.backend_id = doc.at("backend_id").get<std::string>();
    r.backbone = doc.at("backbone").get<std::string>();
    r.config = config_from_json(doc.at("config"));
    for (const auto& row : doc.at("rows")) {
      CategoryRow c;
      c.category = row.at("category").get<std::string>();
      c.n_refs = row.at("n_refs").get<int>();
      c.mean_auroc = row.at("mean_auroc").get<double>();
      c.std_auroc = row.at("std_auroc").get<double>();
      c.seed_aurocs = row.at("seed_aurocs").get<std::vector<double>>();
      r.rows.push_back(std::move(c));
    }
    for (const auto& o : doc.at("overall")) {
      r.overall.push_back({o.at("n_refs").get<int>(), o.at("mean_auroc").get<double>(),
                           o.at("mean_std").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError("malformed report summary " + path.string() + ": " + e.what());
  }
}

std::string format_report(const ProtocolReport& report) {
  const auto& cfg = report.config;
  std::string out;
  if (!report.label.empty()) out += report.label + "\n";
  out += fmt::format("backbone {} ({}), {}, gamma {}, {}, {}, {} seed(s)\n",
                     report.backbone.empty() ? "?" : report.backbone, report.backend_id,
                     cfg.grid_id(), cfg.gamma, to_string(cfg.metric), to_string(cfg.aggregation),
                     cfg.seeds);
  std::size_t width = 8;
  for (const auto& r : report.rows) width = std::max(width, r.category.size());
  out += fmt::format("{:<{}}", "category", width);
  for (int n : cfg.n_refs) out += fmt::format("  {:>15}", fmt::format("{} ref(s)", n));
  out += "\n";
  std::map<std::pair<std::string, int>, const CategoryRow*> cells;
  std::vector<std::string> order;
  for (const auto& r : report.rows) {
    if (cells.empty() || order.back() != r.category) {
      if (std::find(order.begin(), order.end(), r.category) == order.end()) order.push_back(r.category);
    }
    cells[{r.category, r.n_refs}] = &r;
  }
  for (const auto& c : order) {
    out += fmt::format("{:<{}}", c, width);
    for (int n : cfg.n_refs) {
      const auto it = cells.find({c, n});
      out += it == cells.end()
                 ? fmt::format("  {:>15}", "-")
                 : fmt::format("  {:>15}", fmt::format("{:.2f} ± {:.2f}", 100.0 * it->second->mean_auroc,
                                                       100.0 * it->second->std_auroc));
    }
    out += "\n";
  }
  out += fmt::format("{:<{}}", "mean", width);
  for (const auto& o : report.overall) {
    out += fmt::format("  {:>15}", fmt::format("{:.2f} ± {:.2f}", 100.0 * o.mean_auroc, 100.0 * o.mean_std));
  }
  out += "\n";
  return out;
}

std::string score_table_csv(const TrialResult& result) {
  std::string out = "source_id,true_label,score\n";
  for (const auto& s : result.scores) {
    out += fmt::format("{},{},{:.17g}\n", s.sample_id, s.label, s.score);
  }
  return out;
}

std::string reference_set_json(const TrialResult& result) {
  nlohmann::ordered_json j;
  j["target_category"] = result.spec.target_category;
  j["n_refs"] = result.spec.n_refs;
  j["seed"] = result.spec.seed;
  j["grid_id"] = result.spec.grid_id;
  j["backend_id"] = result.spec.backend_id;
  j["reference_ids"] = result.reference_ids;
  j["gamma"] = result.weights.gamma;
  j["view_weights"] = result.weights.weights;
  return j.dump(2) + "\n";
}

}  // namespace dmp3dad
