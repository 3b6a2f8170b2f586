#include "sbsrl/harness.hpp"

#include "sbsrl/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace sbsrl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::string num(double v) { return fmt("%.10g", v); }

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw ConfigError("output directory '" + dir + "' cannot be created");
  }
  const fs::path probe = fs::path(dir) / ".sbsrl-write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory '" + dir + "' is not writable");
  }
  fs::remove(probe, ec);
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "seed",        "episode",      "j_r_true",      "j_c_true",         "max_inst_cost",
      "j_s_planned", "beta_n",       "d_sigma_n",     "delta_zeta",       "feasible_safe",
      "feasible_explore", "terminated", "wall_time_s"};
  return cols;
}

std::string csv_header(bool with_config) {
  std::string h = with_config ? "config," : "";
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) h += ',';
    h += cols[i];
  }
  return h + '\n';
}

std::string format_csv_row(const CsvRow& r, bool with_config) {
  std::string s;
  if (with_config) s += r.config + ',';
  s += std::to_string(r.seed) + ',' + std::to_string(r.episode) + ',';
  for (double v : {r.j_r_true, r.j_c_true, r.max_inst_cost, r.j_s_planned, r.beta_n, r.d_sigma_n,
                   r.delta_zeta}) {
    s += num(v) + ',';
  }
  s += r.feasible_safe ? "1," : "0,";
  s += r.feasible_explore ? "1," : "0,";
  s += r.terminated ? "1," : "0,";
  s += num(r.wall_time_s) + '\n';
  return s;
}

CsvRow csv_row_from_log(std::uint64_t seed, const EpisodeLog& log) {
  CsvRow r;
  r.seed = seed;
  r.episode = log.episode;
  r.j_r_true = log.j_r_true;
  r.j_c_true = log.j_c_true;
  r.max_inst_cost = log.max_inst_cost;
  r.j_s_planned = log.j_s_planned;
  r.beta_n = log.beta_n;
  r.d_sigma_n = log.d_sigma_n;
  r.delta_zeta = log.delta_zeta;
  r.feasible_safe = log.feasible_safe;
  r.feasible_explore = log.feasible_explore;
  r.terminated = log.terminated;
  r.wall_time_s = log.wall_time_s;
  return r;
}

std::vector<CsvRow> parse_episodes_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(origin + ": empty file, no header");
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) index[header[i]] = i;
  for (const auto& c : csv_columns()) {
    if (!index.count(c)) throw ConfigError(origin + ": missing column '" + c + "'");
  }
  const bool has_config = index.count("config") != 0;

  std::vector<CsvRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    const std::string where = origin + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) {
      throw ConfigError(where + ": expected " + std::to_string(header.size()) + " cells");
    }
    auto cell = [&](const std::string& c) -> const std::string& { return cells[index.at(c)]; };
    auto real = [&](const std::string& c) {
      const std::string& s = cell(c);
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || *end != '\0' || !std::isfinite(v)) {
        throw ConfigError(where + ": column '" + c + "' is not a finite number");
      }
      return v;
    };
    auto flag = [&](const std::string& c) {
      const std::string& s = cell(c);
      if (s != "0" && s != "1") throw ConfigError(where + ": column '" + c + "' must be 0 or 1");
      return s == "1";
    };
    CsvRow r;
    if (has_config) r.config = cell("config");
    r.seed = static_cast<std::uint64_t>(real("seed"));
    r.episode = static_cast<int>(real("episode"));
    r.j_r_true = real("j_r_true");
    r.j_c_true = real("j_c_true");
    r.max_inst_cost = real("max_inst_cost");
    r.j_s_planned = real("j_s_planned");
    r.beta_n = real("beta_n");
    r.d_sigma_n = real("d_sigma_n");
    r.delta_zeta = real("delta_zeta");
    r.feasible_safe = flag("feasible_safe");
    r.feasible_explore = flag("feasible_explore");
    r.terminated = flag("terminated");
    r.wall_time_s = real("wall_time_s");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CsvRow> read_episodes_csv(const std::string& path) {
  return parse_episodes_csv(read_file(path), path);
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

void apply_overrides(ExperimentConfig& cfg, const RunOverrides& ov) {
  if (ov.seeds) {
    if (ov.seeds->empty()) throw ConfigError("seed list is empty");
    if (std::set<std::uint64_t>(ov.seeds->begin(), ov.seeds->end()).size() != ov.seeds->size()) {
      throw ConfigError("seed list must be distinct");
    }
    cfg.seeds = *ov.seeds;
  }
  if (ov.master_seed) cfg.master_seed = *ov.master_seed;
  if (ov.parallelism) {
    if (*ov.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    cfg.parallelism = *ov.parallelism;
  }
  if (ov.wall_clock_budget_s) {
    if (*ov.wall_clock_budget_s < 0.0) throw ConfigError("wall-clock budget must be >= 0");
    cfg.wall_clock_budget_s = *ov.wall_clock_budget_s;
  }
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg,
                                 std::optional<std::chrono::steady_clock::time_point> deadline) {
  cfg.run.validate();
  ExperimentOutcome out;
  out.name = cfg.name;
  out.run = cfg.run;
  out.master_seed = cfg.master_seed;
  out.seeds.resize(cfg.seeds.size());
  if (!deadline && cfg.wall_clock_budget_s > 0.0) {
    deadline = std::chrono::steady_clock::now() +
               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                   std::chrono::duration<double>(cfg.wall_clock_budget_s));
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) return;
      SeedOutcome& so = out.seeds[i];
      so.seed = cfg.seeds[i];
      so.loop_seed = run_seed(cfg.master_seed, so.seed);
      RunConfig rc = cfg.run;
      rc.seed = so.loop_seed;
      rc.deadline = deadline;
      try {
        if (deadline && std::chrono::steady_clock::now() > *deadline) {
          throw BudgetExceeded("wall-clock budget exhausted before seed " +
                               std::to_string(so.seed));
        }
        auto sink = [&so](const EpisodeLog& log) { so.logs.push_back(log); };
        so.result = rc.kind == RunKind::MeanOnly ? baseline_mean_run(rc, sink)
                                                 : sbsrl_run(rc, sink);
        so.completed = true;
      } catch (const std::exception& e) {
        so.error = e.what();
        so.failure = std::current_exception();
      }
    }
  };

  const int n_workers =
      std::max(1, std::min<int>(cfg.parallelism, static_cast<int>(cfg.seeds.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::vector<CsvRow> outcome_rows(const ExperimentOutcome& out, const std::string& config) {
  std::vector<CsvRow> rows;
  for (const auto& so : out.seeds) {
    for (const auto& log : so.logs) {
      rows.push_back(csv_row_from_log(so.seed, log));
      rows.back().config = config;
    }
  }
  return rows;
}

namespace {

json outcome_json(const ExperimentOutcome& out) {
  const double d = out.run.budget();
  json j;
  j["name"] = out.name;
  j["version"] = kVersion;
  j["kind"] = std::string(to_string(out.run.kind));
  j["env"] = std::string(to_string(out.run.env.kind));
  j["budget"] = d;
  j["epsilon"] = out.run.epsilon;
  j["delta"] = out.run.delta;
  j["zeta"] = out.run.zeta;
  j["master_seed"] = out.master_seed;

  json seeds = json::array();
  std::size_t rows = 0, violations = 0, terminated = 0, completed = 0;
  double max_jc = -std::numeric_limits<double>::infinity();
  double sum_jr = 0.0;
  for (const auto& so : out.seeds) {
    json s;
    s["seed"] = so.seed;
    s["loop_seed"] = so.loop_seed;
    s["status"] = so.completed ? "ok" : (so.failure ? "failed" : "not-run");
    if (!so.error.empty()) s["error"] = so.error;
    std::size_t v = 0;
    double seed_max = -std::numeric_limits<double>::infinity();
    double seed_sum = 0.0;
    for (const auto& log : so.logs) {
      if (log.j_c_true > d) ++v;
      seed_max = std::max(seed_max, log.j_c_true);
      seed_sum += log.j_r_true;
    }
    s["episodes"] = so.logs.size();
    s["violations"] = v;
    s["max_j_c_true"] = so.logs.empty() ? json(nullptr) : json(seed_max);
    s["sum_j_r_true"] = seed_sum;
    if (so.result) {
      const RunResult& r = *so.result;
      s["final_j_r"] = r.final_eval.j_r;
      s["final_j_r_se"] = r.final_eval.j_r_se;
      s["final_j_c"] = r.final_eval.j_c;
      s["final_j_c_se"] = r.final_eval.j_c_se;
      s["termination_reason"] = std::string(to_string(r.reason));
      s["termination_episode"] = r.termination_episode;
      s["n_samples"] = r.n_samples;
      s["delta_zeta"] = r.delta_zeta;
      if (r.reason == TerminationReason::ExplorationInfeasible) ++terminated;
      ++completed;
    }
    rows += so.logs.size();
    violations += v;
    sum_jr += seed_sum;
    if (!so.logs.empty()) max_jc = std::max(max_jc, seed_max);
    seeds.push_back(std::move(s));
  }
  j["seeds"] = std::move(seeds);
  json t;
  t["rows"] = rows;
  t["violations"] = violations;
  t["max_j_c_true"] = rows ? json(max_jc) : json(nullptr);
  t["sum_j_r_true"] = sum_jr;
  t["seeds_completed"] = completed;
  t["seeds_terminated"] = terminated;
  j["totals"] = std::move(t);
  j["status"] = completed == out.seeds.size() ? "ok" : "aborted";
  return j;
}

}  // namespace

std::string run_summary_json(const ExperimentOutcome& out) {
  return outcome_json(out).dump(2) + '\n';
}

std::string compare_summary_json(const std::vector<ExperimentOutcome>& outs) {
  json j;
  j["version"] = kVersion;
  j["budget"] = outs.empty() ? 0.0 : outs.front().run.budget();
  json configs = json::array();
  for (const auto& o : outs) configs.push_back(outcome_json(o));
  j["configs"] = std::move(configs);
  return j.dump(2) + '\n';
}

void rethrow_failures(const std::vector<ExperimentOutcome>& outs) {
  std::exception_ptr first;
  for (const auto& o : outs) {
    for (const auto& so : o.seeds) {
      if (!so.failure) continue;
      try {
        std::rethrow_exception(so.failure);
      } catch (const BudgetExceeded&) {
        std::rethrow_exception(so.failure);
      } catch (...) {
        if (!first) first = so.failure;
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

namespace {

std::string rows_csv(const std::vector<CsvRow>& rows, bool with_config) {
  std::string s = csv_header(with_config);
  for (const auto& r : rows) s += format_csv_row(r, with_config);
  return s;
}

}  // namespace

ExperimentOutcome cmd_run(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.run.validate();
  prepare_dir(out_dir);
  ExperimentOutcome out = run_experiment(cfg);
  const fs::path dir(out_dir);
  const auto rows = outcome_rows(out);
  write_file(dir / "episodes.csv", rows_csv(rows, false));
  write_file(dir / "summary.json", run_summary_json(out));
  write_file(dir / "reward.svg", svg_curves(rows, false, cfg.run.budget()));
  write_file(dir / "cost.svg", svg_curves(rows, true, cfg.run.budget()));
  rethrow_failures({out});
  return out;
}

std::vector<ExperimentOutcome> cmd_compare(const std::vector<std::string>& config_paths,
                                           const CompareOptions& opt, const std::string& out_dir) {
  if (config_paths.empty()) throw ConfigError("compare needs at least one config");
  struct Variant {
    std::string name;
    ExperimentConfig cfg;
  };
  std::vector<Variant> variants;
  std::set<std::string> names;
  auto unique_name = [&](std::string base) {
    std::string name = base;
    for (int k = 2; names.count(name); ++k) name = base + "-" + std::to_string(k);
    names.insert(name);
    return name;
  };
  double budget_s = 0.0;
  for (const auto& path : config_paths) {
    ExperimentConfig cfg = load_experiment_config(path);
    apply_overrides(cfg, opt.overrides);
    if (cfg.wall_clock_budget_s > 0.0) {
      budget_s = budget_s > 0.0 ? std::min(budget_s, cfg.wall_clock_budget_s)
                                : cfg.wall_clock_budget_s;
    }
    const std::string stem = unique_name(fs::path(path).stem().string());
    variants.push_back({stem, cfg});
    if (opt.baseline) {
      ExperimentConfig b = cfg;
      b.run.kind = RunKind::MeanOnly;
      variants.push_back({unique_name(stem + "-mean"), b});
    }
    for (double v : opt.ablation) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("ablation values must be >= 0");
      ExperimentConfig a = cfg;
      a.run.dsigma_mode = DsigmaMode::Fixed;
      a.run.dsigma_value = v;
      variants.push_back({unique_name(stem + "-dsigma-" + fmt("%g", v)), a});
    }
  }
  for (auto& v : variants) {
    v.cfg.name = v.name;
    v.cfg.run.validate();
  }
  prepare_dir(out_dir);

  std::optional<std::chrono::steady_clock::time_point> deadline;
  if (budget_s > 0.0) {
    deadline = std::chrono::steady_clock::now() +
               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                   std::chrono::duration<double>(budget_s));
  }
  std::vector<ExperimentOutcome> outs;
  std::vector<CsvRow> rows;
  for (const auto& v : variants) {
    outs.push_back(run_experiment(v.cfg, deadline));
    const auto r = outcome_rows(outs.back(), v.name);
    rows.insert(rows.end(), r.begin(), r.end());
    if (std::any_of(outs.back().seeds.begin(), outs.back().seeds.end(),
                    [](const SeedOutcome& s) { return bool(s.failure); })) {
      break;
    }
  }
  const fs::path dir(out_dir);
  const double d = variants.front().cfg.run.budget();
  write_file(dir / "episodes.csv", rows_csv(rows, true));
  write_file(dir / "summary.json", compare_summary_json(outs));
  write_file(dir / "bars.svg", svg_bars(rows, d));
  rethrow_failures(outs);
  return outs;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

PlotKind parse_plot_kind(std::string_view name) {
  if (name == "curves") return PlotKind::Curves;
  if (name == "bars") return PlotKind::Bars;
  throw InputError("unknown plot kind '" + std::string(name) + "' (curves|bars)");
}

namespace {

constexpr double kWidth = 640.0, kHeight = 400.0;
constexpr double kLeft = 64.0, kRight = 20.0, kTop = 36.0, kBottom = 48.0;

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string coord(double v) { return fmt("%.3f", v); }

struct Axes {
  double x0, x1, y0, y1;
  double px(double x) const {
    return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

std::string svg_open(const std::string& title) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(kWidth) + "\" height=\"" +
         coord(kHeight) + "\" viewBox=\"0 0 " + coord(kWidth) + " " + coord(kHeight) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + coord(kWidth / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(title) + "</text>\n";
}

std::string svg_axes(const Axes& ax, const std::string& xlabel, const std::string& ylabel,
                     bool x_ticks) {
  std::string s = "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  const double bx = kHeight - kBottom;
  s += "<line x1=\"" + coord(kLeft) + "\" y1=\"" + coord(bx) + "\" x2=\"" +
       coord(kWidth - kRight) + "\" y2=\"" + coord(bx) + "\"/>\n";
  s += "<line x1=\"" + coord(kLeft) + "\" y1=\"" + coord(kTop) + "\" x2=\"" + coord(kLeft) +
       "\" y2=\"" + coord(bx) + "\"/>\n</g>\n<g class=\"ticks\" fill=\"black\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = ax.y0 + (ax.y1 - ax.y0) * k / 4.0;
    s += "<text x=\"" + coord(kLeft - 6) + "\" y=\"" + coord(ax.py(y) + 4) +
         "\" text-anchor=\"end\">" + fmt("%.3g", y) + "</text>\n";
    if (x_ticks) {
      const double x = ax.x0 + (ax.x1 - ax.x0) * k / 4.0;
      s += "<text x=\"" + coord(ax.px(x)) + "\" y=\"" + coord(bx + 16) +
           "\" text-anchor=\"middle\">" + fmt("%.3g", x) + "</text>\n";
    }
  }
  s += "<text x=\"" + coord((kLeft + kWidth - kRight) / 2) + "\" y=\"" + coord(kHeight - 8) +
       "\" text-anchor=\"middle\">" + xml_escape(xlabel) + "</text>\n";
  s += "<text x=\"14\" y=\"" + coord((kTop + bx) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       coord((kTop + bx) / 2) + ")\">" + xml_escape(ylabel) + "</text>\n</g>\n";
  return s;
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string svg_curves(const std::vector<CsvRow>& rows, bool cost, double budget) {
  auto value = [cost](const CsvRow& r) { return cost ? r.j_c_true : r.j_r_true; };
  // Traces keyed by (config, seed) in first-appearance order.
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  std::map<std::pair<std::string, std::uint64_t>, std::vector<std::pair<int, double>>> traces;
  double lo = cost ? std::min(0.0, budget) : 0.0, hi = cost ? budget : 0.0;
  int max_ep = 1;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.config, r.seed);
    if (!traces.count(key)) keys.push_back(key);
    traces[key].emplace_back(r.episode, value(r));
    lo = std::min(lo, value(r));
    hi = std::max(hi, value(r));
    max_ep = std::max(max_ep, r.episode);
  }
  const auto [y0, y1] = padded(lo, hi);
  const Axes ax{0.0, static_cast<double>(max_ep), y0, y1};

  std::string s = svg_open(cost ? "Cost return vs episode" : "Reward return vs episode");
  s += svg_axes(ax, "episode", cost ? "evaluated cost return" : "evaluated reward return", true);

  std::map<std::string, std::map<int, std::pair<double, int>>> means;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& pts = traces[keys[i]];
    std::string points;
    std::string markers;
    for (const auto& [ep, v] : pts) {
      if (!points.empty()) points += ' ';
      points += coord(ax.px(ep)) + ',' + coord(ax.py(v));
      markers += "<circle class=\"point\" cx=\"" + coord(ax.px(ep)) + "\" cy=\"" +
                 coord(ax.py(v)) + "\" r=\"2\" fill=\"" + palette(i) + "\"/>\n";
      auto& m = means[keys[i].first][ep];
      m.first += v;
      m.second += 1;
    }
    s += "<g class=\"trace\" data-config=\"" + xml_escape(keys[i].first) + "\" data-seed=\"" +
         std::to_string(keys[i].second) + "\">\n<polyline class=\"trace\" fill=\"none\" stroke=\"" +
         palette(i) + "\" stroke-opacity=\"0.5\" points=\"" + points + "\"/>\n" + markers +
         "</g>\n";
  }
  std::size_t c = 0;
  for (const auto& [config, by_ep] : means) {
    std::string points;
    for (const auto& [ep, acc] : by_ep) {
      if (!points.empty()) points += ' ';
      points += coord(ax.px(ep)) + ',' + coord(ax.py(acc.first / acc.second));
    }
    s += "<polyline class=\"mean\" data-config=\"" + xml_escape(config) +
         "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"" +
         (c++ ? "6 3" : "none") + "\" points=\"" + points + "\"/>\n";
  }
  if (cost) {
    s += "<line class=\"budget\" x1=\"" + coord(kLeft) + "\" y1=\"" + coord(ax.py(budget)) +
         "\" x2=\"" + coord(kWidth - kRight) + "\" y2=\"" + coord(ax.py(budget)) +
         "\" stroke=\"red\" stroke-dasharray=\"4 2\"/>\n";
    s += "<text x=\"" + coord(kWidth - kRight - 4) + "\" y=\"" + coord(ax.py(budget) - 4) +
         "\" text-anchor=\"end\" fill=\"red\">d = " + fmt("%g", budget) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string svg_bars(const std::vector<CsvRow>& rows, double budget) {
  std::vector<std::string> configs;
  std::map<std::string, double> reward_sum, violation;
  std::map<std::string, std::set<std::uint64_t>> seeds;
  for (const auto& r : rows) {
    if (!reward_sum.count(r.config)) {
      configs.push_back(r.config);
      reward_sum[r.config] = 0.0;
      violation[r.config] = 0.0;
    }
    reward_sum[r.config] += r.j_r_true;
    violation[r.config] = std::max(violation[r.config], r.j_c_true - budget);
    seeds[r.config].insert(r.seed);
  }
  double best = 0.0;
  for (const auto& c : configs) {
    reward_sum[c] /= static_cast<double>(seeds[c].size());
    best = std::max(best, std::abs(reward_sum[c]));
  }
  double worst = 0.0;
  for (const auto& c : configs) worst = std::max(worst, violation[c]);

  std::string s = svg_open("Normalized cumulative reward and max cost violation");
  const double panel = (kWidth - kLeft - kRight) / 2.0;
  const double base = kHeight - kBottom;
  const double height = kHeight - kTop - kBottom;
  s += "<g class=\"axes\" stroke=\"black\">\n";
  for (int p = 0; p < 2; ++p) {
    const double x = kLeft + p * panel;
    s += "<line x1=\"" + coord(x) + "\" y1=\"" + coord(base) + "\" x2=\"" +
         coord(x + panel - 10) + "\" y2=\"" + coord(base) + "\"/>\n";
    s += "<line x1=\"" + coord(x) + "\" y1=\"" + coord(kTop) + "\" x2=\"" + coord(x) +
         "\" y2=\"" + coord(base) + "\"/>\n";
  }
  s += "</g>\n<g class=\"labels\">\n";
  s += "<text x=\"" + coord(kLeft + panel / 2) + "\" y=\"" + coord(kHeight - 8) +
       "\" text-anchor=\"middle\">normalized cumulative reward</text>\n";
  s += "<text x=\"" + coord(kLeft + 1.5 * panel) + "\" y=\"" + coord(kHeight - 8) +
       "\" text-anchor=\"middle\">max cost violation (max " + fmt("%.3g", worst) + ")</text>\n";
  s += "</g>\n";
  const double slot = configs.empty() ? 0.0 : (panel - 20.0) / static_cast<double>(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const double norm = best > 0.0 ? reward_sum[c] / best : 0.0;
    const double viol = worst > 0.0 ? std::max(0.0, violation[c]) / worst : 0.0;
    const double values[2] = {std::max(0.0, norm), viol};
    const double raw[2] = {norm, std::max(0.0, violation[c])};
    const char* cls[2] = {"bar reward", "bar violation"};
    for (int p = 0; p < 2; ++p) {
      const double x = kLeft + p * panel + 6.0 + slot * static_cast<double>(i);
      const double h = values[p] * height;
      s += "<rect class=\"" + std::string(cls[p]) + "\" data-config=\"" + xml_escape(c) +
           "\" data-value=\"" + num(raw[p]) + "\" x=\"" + coord(x) + "\" y=\"" +
           coord(base - h) + "\" width=\"" + coord(std::max(1.0, slot - 6.0)) + "\" height=\"" +
           coord(h) + "\" fill=\"" + palette(i) + "\"/>\n";
    }
    s += "<text class=\"legend\" x=\"" + coord(kWidth - kRight) + "\" y=\"" +
         coord(kTop + 12.0 * static_cast<double>(i)) + "\" text-anchor=\"end\" fill=\"" +
         palette(i) + "\">" + xml_escape(c.empty() ? "run" : c) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::vector<std::string> cmd_plot(const std::string& csv_path, PlotKind kind,
                                  const std::string& out_dir, std::optional<double> budget) {
  auto rows = read_episodes_csv(csv_path);
  if (!budget) {
    const fs::path summary = fs::path(csv_path).parent_path() / "summary.json";
    if (fs::exists(summary)) {
      try {
        const auto j = json::parse(read_file(summary.string()));
        if (j.contains("budget") && j["budget"].is_number()) budget = j["budget"].get<double>();
      } catch (const json::exception&) {
      }
    }
    if (!budget) {
      throw ConfigError("budget d unknown: no summary.json next to '" + csv_path +
                        "'; pass --d");
    }
  }
  prepare_dir(out_dir);
  const fs::path dir(out_dir);
  std::vector<std::string> written;
  if (kind == PlotKind::Curves) {
    write_file(dir / "reward.svg", svg_curves(rows, false, *budget));
    write_file(dir / "cost.svg", svg_curves(rows, true, *budget));
    written = {(dir / "reward.svg").string(), (dir / "cost.svg").string()};
  } else {
    const std::string stem = fs::path(csv_path).parent_path().filename().string();
    for (auto& r : rows) {
      if (r.config.empty()) r.config = stem.empty() ? "run" : stem;
    }
    write_file(dir / "bars.svg", svg_bars(rows, *budget));
    written = {(dir / "bars.svg").string()};
  }
  return written;
}

// ---------------------------------------------------------------------------
// Sample budget
// ---------------------------------------------------------------------------

BudgetReport cmd_budget(const BudgetRequest& req) {
  if (!(req.delta > 0.0 && req.delta <= 1.0)) throw InputError("delta must lie in (0, 1]");
  if (!(req.zeta > 0.0)) throw InputError("zeta must be positive");
  if (!(req.rkhs_bound > 0.0)) throw InputError("RKHS bound B must be positive");
  if (req.d_x < 1) throw InputError("d_x must be >= 1");
  BudgetReport rep;
  rep.request = req;
  if (req.exponent_override) {
    rep.exponent = *req.exponent_override;
    rep.phi_hat = rep.exponent / req.d_x - 0.5 * req.rkhs_bound * req.rkhs_bound;
  } else {
    req.kernel.validate();
    rep.phi_hat = small_ball_exponent(req.kernel, req.zeta, req.small_ball);
    rep.exponent = req.d_x * (0.5 * req.rkhs_bound * req.rkhs_bound + rep.phi_hat);
  }
  const SampleBudget b = sample_budget_from_exponent(req.delta, rep.exponent, req.cap);
  rep.m = b.m;
  rep.capped = b.capped;
  rep.log_m = b.log_m;
  return rep;
}

std::string budget_json(const BudgetReport& r) {
  json j;
  j["M"] = r.m;
  j["phi_hat"] = r.phi_hat;
  j["zeta"] = r.request.zeta;
  j["delta"] = r.request.delta;
  j["rkhs_bound"] = r.request.rkhs_bound;
  j["d_x"] = r.request.d_x;
  j["exponent"] = r.exponent;
  j["log_M"] = r.log_m;
  j["capped"] = r.capped;
  j["exponent_override"] = r.request.exponent_override.has_value();
  j["small_ball_draws"] = r.request.small_ball.n_draws;
  j["small_ball_grid"] = r.request.small_ball.n_grid;
  return j.dump() + '\n';
}

std::string budget_text(const BudgetReport& r) {
  std::string s;
  s += "M = " + std::to_string(r.m) + (r.capped ? " (capped; the bound is conservative)" : "") +
       '\n';
  s += "phi_hat(zeta) = " + num(r.phi_hat) +
       (r.request.exponent_override ? " (implied by the forced exponent)" : "") + '\n';
  s += "exponent d_x (B^2/2 + phi) = " + num(r.exponent) + '\n';
  s += "log M (uncapped) = " + num(r.log_m) + '\n';
  s += "delta = " + num(r.request.delta) + ", zeta = " + num(r.request.zeta) + '\n';
  return s;
}

}  // namespace sbsrl
