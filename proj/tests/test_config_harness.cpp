#include <doctest.h>

#include "oracles.hpp"
#include "sbsrl/config.hpp"
#include "sbsrl/error.hpp"
#include "sbsrl/harness.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

using namespace sbsrl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kSmoke = SBSRL_SOURCE_DIR "/configs/smoke.cfg";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("sbsrl_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

CsvRow row(std::uint64_t seed, int ep, double jr, double jc) {
  CsvRow r;
  r.seed = seed;
  r.episode = ep;
  r.j_r_true = jr;
  r.j_c_true = jc;
  return r;
}

// y coordinates of every polyline with class `cls`.
std::vector<std::vector<double>> polyline_ys(const std::string& svg, const std::string& cls) {
  std::vector<std::vector<double>> out;
  const std::regex re("<polyline class=\"" + cls + "\"[^>]*points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator();
       ++it) {
    std::vector<double> ys;
    std::istringstream pts((*it)[1].str());
    std::string pair;
    while (pts >> pair) ys.push_back(std::stod(pair.substr(pair.find(',') + 1)));
    out.push_back(ys);
  }
  return out;
}

}  // namespace

TEST_CASE("key-value parsing errors carry the line number") {
  CHECK(error_of([] { KeyValueFile::parse("a.b = 1\nnonsense\n", "x.cfg"); })
            .find("x.cfg:2") != std::string::npos);
  CHECK(error_of([] { KeyValueFile::parse("a.b = 1\na.b = 2\n", "x.cfg"); })
            .find("duplicate") != std::string::npos);
  const std::string bad = error_of([] { parse_experiment_config("\ntheory.delta = abc\n", "y.cfg"); });
  CHECK(bad.find("y.cfg:2") != std::string::npos);
  CHECK(bad.find("theory.delta") != std::string::npos);
}

TEST_CASE("unknown keys are rejected") {
  const std::string e = error_of([] { parse_experiment_config("env.kind = pendulum\nenv.colour = red\n"); });
  CHECK(e.find("env.colour") != std::string::npos);
}

TEST_CASE("invalid theory parameters are config errors") {
  CHECK_THROWS_AS(parse_experiment_config("theory.delta = 0.9\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("theory.zeta = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("kernel.lengthscales = 1, 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("samples.count = some\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("run.parallelism = 0\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/path.cfg"), ConfigError);
}

TEST_CASE("config values reach the run config") {
  const ExperimentConfig e = load_experiment_config(kSmoke);
  CHECK(e.name == "smoke");
  CHECK(e.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(e.run.env.horizon == 20);
  CHECK(e.run.n_samples == 2);
  CHECK(e.run.dsigma_mode == DsigmaMode::Fixed);
  CHECK(e.run.icem.population == 8);
  CHECK(e.run.probe_icem.population == 8);
  CHECK(e.run.probe_icem.iterations == 1);
  CHECK(e.run.nominal.phys.mass == 1.2);
  CHECK(e.run.kernel.lengthscales(2) == 3.0);
}

TEST_CASE("seed lists") {
  CHECK(parse_seed_list("1-3,7") == std::vector<std::uint64_t>{1, 2, 3, 7});
  CHECK(parse_seed_list(" 5 ") == std::vector<std::uint64_t>{5});
  CHECK_THROWS_AS(parse_seed_list("1,1"), ConfigError);
  CHECK_THROWS_AS(parse_seed_list("3-1"), ConfigError);
  CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
  CHECK_THROWS_AS(parse_seed_list("x"), ConfigError);
  CHECK(run_seed(0, 1) != run_seed(0, 2));
  CHECK(run_seed(0, 1) != run_seed(1, 1));
  CHECK(run_seed(4, 9) == run_seed(4, 9));
}

TEST_CASE("overrides replace config values") {
  ExperimentConfig e = load_experiment_config(kSmoke);
  RunOverrides ov;
  ov.seeds = std::vector<std::uint64_t>{9};
  ov.master_seed = 42;
  ov.parallelism = 3;
  apply_overrides(e, ov);
  CHECK(e.seeds == std::vector<std::uint64_t>{9});
  CHECK(e.master_seed == 42);
  CHECK(e.parallelism == 3);
  CHECK(e.wall_clock_budget_s == 120.0);
}

TEST_CASE("CSV header is frozen") {
  CHECK(csv_header(false) ==
        "seed,episode,j_r_true,j_c_true,max_inst_cost,j_s_planned,beta_n,d_sigma_n,delta_zeta,"
        "feasible_safe,feasible_explore,terminated,wall_time_s\n");
  CHECK(csv_header(true).rfind("config,seed,", 0) == 0);
}

TEST_CASE("CSV rows round-trip") {
  CsvRow a = row(3, 4, 12.5, 1.0 / 3.0);
  a.config = "pend-mean";
  a.beta_n = 2.25;
  a.feasible_explore = false;
  a.terminated = true;
  const std::string text = csv_header(true) + format_csv_row(a, true) + "\n";
  const auto rows = parse_episodes_csv(text, "mem");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].config == "pend-mean");
  CHECK(rows[0].seed == 3);
  CHECK(rows[0].episode == 4);
  CHECK(rows[0].j_c_true == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(rows[0].beta_n == 2.25);
  CHECK_FALSE(rows[0].feasible_explore);
  CHECK(rows[0].terminated);
}

TEST_CASE("CSV missing column is named") {
  const std::string e = error_of([] { parse_episodes_csv("seed,episode,j_r_true\n1,0,2\n", "mem"); });
  CHECK(e.find("j_c_true") != std::string::npos);
  CHECK(parse_episodes_csv(csv_header(false), "mem").empty());
}

TEST_CASE("smoke run writes consistent artifacts") {
  const fs::path dir = scratch_dir("run");
  ExperimentConfig cfg = load_experiment_config(kSmoke);
  const ExperimentOutcome out = cmd_run(cfg, dir.string());
  for (const char* f : {"episodes.csv", "summary.json", "reward.svg", "cost.svg"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto rows = read_episodes_csv((dir / "episodes.csv").string());
  const json s = json::parse(slurp(dir / "summary.json"));
  CHECK(s["status"] == "ok");
  CHECK(s["totals"]["rows"].get<std::size_t>() == rows.size());
  double sum = 0.0, worst = -1e300;
  std::size_t violations = 0;
  for (const auto& r : rows) {
    sum += r.j_r_true;
    worst = std::max(worst, r.j_c_true);
    if (r.j_c_true > cfg.run.budget()) ++violations;
  }
  CHECK(s["totals"]["sum_j_r_true"].get<double>() == doctest::Approx(sum).epsilon(1e-8));
  CHECK(s["totals"]["max_j_c_true"].get<double>() == doctest::Approx(worst).epsilon(1e-8));
  CHECK(s["totals"]["violations"].get<std::size_t>() == violations);
  CHECK(s["seeds"].size() == 2);
  CHECK(s["budget"].get<double>() == 6.0);

  // Parallel execution is byte-identical.
  const fs::path dir2 = scratch_dir("run_par");
  cfg.parallelism = 2;
  cmd_run(cfg, dir2.string());
  CHECK(slurp(dir / "episodes.csv") == slurp(dir2 / "episodes.csv"));
  CHECK(slurp(dir / "summary.json") == slurp(dir2 / "summary.json"));
}

TEST_CASE("an expired wall-clock budget aborts with partial output") {
  const fs::path dir = scratch_dir("deadline");
  ExperimentConfig cfg = load_experiment_config(kSmoke);
  const auto past = std::chrono::steady_clock::now() - std::chrono::seconds(1);
  const ExperimentOutcome out = run_experiment(cfg, past);
  for (const auto& so : out.seeds) CHECK_FALSE(so.completed);
  CHECK_THROWS_AS(rethrow_failures({out}), BudgetExceeded);
  const json s = json::parse(run_summary_json(out));
  CHECK(s["status"] == "aborted");
}

TEST_CASE("plots: empty CSV, single row, budget rule above cost traces") {
  const std::string empty = svg_curves({}, true, 6.0);
  CHECK(empty.find("<svg") != std::string::npos);
  CHECK(empty.find("</svg>") != std::string::npos);
  CHECK(svg_bars({}, 6.0).find("</svg>") != std::string::npos);

  const std::string one = svg_curves({row(1, 0, 3.0, 2.0)}, false, 6.0);
  CHECK(polyline_ys(one, "trace").size() == 1);

  std::vector<CsvRow> rows;
  for (int ep = 0; ep < 5; ++ep) {
    rows.push_back(row(1, ep, ep, 1.0 + ep));
    rows.push_back(row(2, ep, ep, 5.5 - ep));
  }
  const std::string cost = svg_curves(rows, true, 6.0);
  const std::smatch m = [&] {
    std::smatch mm;
    std::regex_search(cost, mm, std::regex("<line class=\"budget\"[^>]*y1=\"([-0-9.]+)\""));
    return mm;
  }();
  REQUIRE(m.size() == 2);
  const double rule_y = std::stod(m[1].str());
  const auto traces = polyline_ys(cost, "trace");
  CHECK(traces.size() == 2);
  for (const auto& t : traces) {
    CHECK(t.size() == 5);
    for (double y : t) CHECK(y > rule_y);  // screen y grows downward
  }
  const std::string bars = svg_bars(rows, 6.0);
  CHECK(bars.find("bar reward") != std::string::npos);
  CHECK(bars.find("bar violation") != std::string::npos);
  CHECK(parse_plot_kind("bars") == PlotKind::Bars);
  CHECK_THROWS(parse_plot_kind("pie"));
}

TEST_CASE("plot command reads the budget from the summary") {
  const fs::path dir = scratch_dir("plot");
  cmd_run(load_experiment_config(kSmoke), dir.string());
  const fs::path out = dir / "plots";
  const auto written = cmd_plot((dir / "episodes.csv").string(), PlotKind::Curves, out.string(),
                                std::nullopt);
  CHECK(written.size() == 2);
  CHECK(slurp(out / "cost.svg") == slurp(dir / "cost.svg"));

  const fs::path lone = scratch_dir("plot_lone");
  fs::copy_file(dir / "episodes.csv", lone / "episodes.csv");
  CHECK_THROWS_AS(cmd_plot((lone / "episodes.csv").string(), PlotKind::Curves, lone.string(),
                           std::nullopt),
                  ConfigError);
  CHECK_NOTHROW(cmd_plot((lone / "episodes.csv").string(), PlotKind::Bars, lone.string(), 6.0));
}

TEST_CASE("compare names variants and merges rows") {
  const fs::path dir = scratch_dir("compare");
  CompareOptions opt;
  opt.ablation = {0.0, 0.4};
  opt.overrides.seeds = std::vector<std::uint64_t>{1};
  const auto outs = cmd_compare({kSmoke}, opt, dir.string());
  REQUIRE(outs.size() == 4);
  CHECK(outs[0].name == "smoke");
  CHECK(outs[1].name == "smoke-mean");
  CHECK(outs[2].name == "smoke-dsigma-0");
  CHECK(outs[3].name == "smoke-dsigma-0.4");
  const auto rows = read_episodes_csv((dir / "episodes.csv").string());
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.config);
  CHECK(names.size() == 4);
  const json s = json::parse(slurp(dir / "summary.json"));
  CHECK(s["configs"].size() == 4);
  CHECK(fs::exists(dir / "bars.svg"));
}

TEST_CASE("budget report keys and closed-form cases") {
  BudgetRequest req;
  req.delta = 0.1;
  req.exponent_override = 1e-3;
  BudgetReport r = cmd_budget(req);
  CHECK(r.m == oracle::sample_count(0.1, 1e-3));
  const json j = json::parse(budget_json(r));
  for (const char* k : {"M", "phi_hat", "zeta", "delta", "rkhs_bound", "d_x", "exponent", "log_M",
                        "capped", "exponent_override", "small_ball_draws", "small_ball_grid"}) {
    CHECK_MESSAGE(j.contains(k), k);
  }
  CHECK(budget_text(r).find(std::to_string(r.m)) != std::string::npos);

  // exp(-a) >= 1 - delta needs one sample.
  req.exponent_override = -std::log(1.0 - 0.1) * 0.5;
  CHECK(cmd_budget(req).m == 1);
  req.exponent_override = 40.0;
  req.cap = 1000;
  r = cmd_budget(req);
  CHECK(r.capped);
  CHECK(r.m == 1000);
}

TEST_CASE("every shipped config parses") {
  int n = 0;
  for (const auto& e : fs::directory_iterator(SBSRL_SOURCE_DIR "/configs")) {
    if (e.path().extension() != ".cfg") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_experiment_config(e.path().string()));
    ++n;
  }
  CHECK(n >= 4);
}
