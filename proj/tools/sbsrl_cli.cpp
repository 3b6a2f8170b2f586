#include "sbsrl/sbsrl.h"

#include <CLI11.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

namespace {

int exit_code(sbsrl_status s) {
  switch (s) {
    case SBSRL_OK: return 0;
    case SBSRL_E_CONFIG:
    case SBSRL_E_INPUT: return 2;
    case SBSRL_E_BUDGET: return 4;
    default: return 3;
  }
}

int report(sbsrl_status s, const char* what) {
  if (s != SBSRL_OK) {
    std::fprintf(stderr, "sbsrl %s: %s: %s\n", what, sbsrl_status_name(s), sbsrl_last_error());
  }
  return exit_code(s);
}

// SBSRL_SEED, when set, replaces the master seed.
bool env_seed(uint64_t& seed) {
  const char* v = std::getenv("SBSRL_SEED");
  if (!v || !*v) return false;
  errno = 0;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(v, &end, 10);
  if (errno || *end != '\0' || *v == '-') {
    std::fprintf(stderr, "sbsrl: SBSRL_SEED must be a nonnegative integer (got '%s')\n", v);
    std::exit(2);
  }
  seed = parsed;
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sampling-based safe exploration with GP dynamics models"};
  app.set_version_flag("--version", std::string(sbsrl_version()));
  app.require_subcommand(1);

  // run
  std::string config, out_dir = "out", seeds;
  int parallelism = 0;
  double time_budget = -1.0;
  auto* run = app.add_subcommand("run", "Run one experiment over its seed list");
  run->add_option("--config", config, "Experiment config file")->required();
  run->add_option("--out", out_dir, "Output directory")->capture_default_str();
  run->add_option("--seeds", seeds, "Seed list, e.g. 1,2,5 or 1-5");
  run->add_option("--parallelism", parallelism, "Seed-parallel workers")->check(CLI::PositiveNumber);
  run->add_option("--time-budget", time_budget, "Wall-clock budget in seconds (0 = none)")
      ->check(CLI::NonNegativeNumber);
  bool run_json = false;
  run->add_flag("--json", run_json, "Print summary.json to stdout");

  // budget
  double delta = 0.1, zeta = 0.1, rkhs_bound = 1.0, lengthscale = 1.0, variance = 1.0;
  int d_x = 1;
  std::size_t draws = 0, grid = 0;
  double exponent = 0.0;
  bool budget_json = false;
  auto* budget = app.add_subcommand("budget", "Sample count M from the small-ball bound");
  budget->add_option("--delta", delta, "Confidence parameter")->capture_default_str();
  budget->add_option("--zeta", zeta, "Closeness radius")->capture_default_str();
  budget->add_option("--B", rkhs_bound, "RKHS norm bound")->capture_default_str();
  budget->add_option("--dx", d_x, "State dimension")->capture_default_str();
  budget->add_option("--lengthscale", lengthscale, "SE kernel lengthscale")->capture_default_str();
  budget->add_option("--variance", variance, "SE kernel variance")->capture_default_str();
  budget->add_option("--draws", draws, "Small-ball Monte-Carlo draws");
  budget->add_option("--grid", grid, "Small-ball grid points");
  auto* exp_opt =
      budget->add_option("--exponent", exponent, "Force d_x (B^2/2 + phi) instead of estimating");
  budget->add_flag("--json", budget_json, "Machine-readable output");

  // plot
  std::string csv_path, plot_kind = "curves", plot_out;
  double plot_d = 0.0;
  auto* plot = app.add_subcommand("plot", "SVG charts from an episodes CSV");
  plot->add_option("csv", csv_path, "episodes.csv")->required();
  plot->add_option("--kind", plot_kind, "curves | bars")->capture_default_str();
  plot->add_option("--out", plot_out, "Output directory (default: next to the CSV)");
  plot->add_option("--d", plot_d, "Cost budget (default: from summary.json)");

  // compare
  std::vector<std::string> configs;
  std::vector<double> ablation;
  bool no_baseline = false, compare_json = false;
  std::string cmp_out = "compare", cmp_seeds;
  int cmp_parallelism = 0;
  double cmp_budget = -1.0;
  auto* compare = app.add_subcommand("compare", "Run configs with baseline and ablation variants");
  compare->add_option("--config", configs, "Config files (repeatable)")->required();
  compare->add_option("--out", cmp_out, "Output directory")->capture_default_str();
  compare->add_option("--seeds", cmp_seeds, "Seed list for every config");
  compare->add_option("--parallelism", cmp_parallelism, "Seed-parallel workers")
      ->check(CLI::PositiveNumber);
  compare->add_option("--ablation", ablation, "Fixed exploration thresholds")->delimiter(',');
  compare->add_flag("--no-baseline", no_baseline, "Skip the mean-only variant");
  compare->add_option("--time-budget", cmp_budget, "Wall-clock budget in seconds")
      ->check(CLI::NonNegativeNumber);
  compare->add_flag("--json", compare_json, "Print summary.json to stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  uint64_t master = 0;
  const bool has_master = env_seed(master);

  if (*run) {
    sbsrl_experiment* ex = nullptr;
    sbsrl_status s = sbsrl_experiment_load(config.c_str(), &ex);
    if (s != SBSRL_OK) return report(s, "run");
    if (s == SBSRL_OK && !seeds.empty()) s = sbsrl_experiment_set_seeds(ex, seeds.c_str());
    if (s == SBSRL_OK && has_master) s = sbsrl_experiment_set_master_seed(ex, master);
    if (s == SBSRL_OK && parallelism > 0) s = sbsrl_experiment_set_parallelism(ex, parallelism);
    if (s == SBSRL_OK && time_budget >= 0.0) s = sbsrl_experiment_set_time_budget(ex, time_budget);
    if (s == SBSRL_OK) s = sbsrl_experiment_run(ex, out_dir.c_str());
    if (run_json) {
      char* summary = nullptr;
      if (sbsrl_experiment_summary(ex, &summary) == SBSRL_OK) std::fputs(summary, stdout);
      sbsrl_string_free(summary);
    } else if (s == SBSRL_OK) {
      std::printf("wrote %s/episodes.csv, summary.json, reward.svg, cost.svg\n", out_dir.c_str());
    }
    sbsrl_experiment_free(ex);
    return report(s, "run");
  }

  if (*budget) {
    sbsrl_budget_args args;
    sbsrl_budget_args_init(&args);
    args.delta = delta;
    args.zeta = zeta;
    args.rkhs_bound = rkhs_bound;
    args.d_x = d_x;
    args.lengthscale = lengthscale;
    args.variance = variance;
    if (draws) args.n_draws = draws;
    if (grid) args.n_grid = grid;
    if (exp_opt->count()) {
      args.use_exponent = 1;
      args.exponent = exponent;
    }
    char* text = nullptr;
    const sbsrl_status s = sbsrl_budget_report(&args, budget_json ? 1 : 0, &text);
    if (s == SBSRL_OK) std::fputs(text, stdout);
    sbsrl_string_free(text);
    return report(s, "budget");
  }

  if (*plot) {
    if (plot_out.empty()) {
      const auto slash = csv_path.find_last_of('/');
      plot_out = slash == std::string::npos ? "." : csv_path.substr(0, slash);
      if (plot_out.empty()) plot_out = "/";
    }
    const sbsrl_status s = sbsrl_plot(csv_path.c_str(), plot_kind.c_str(), plot_out.c_str(), plot_d);
    if (s == SBSRL_OK) std::printf("wrote %s charts to %s\n", plot_kind.c_str(), plot_out.c_str());
    return report(s, "plot");
  }

  if (*compare) {
    std::vector<const char*> paths;
    for (const auto& c : configs) paths.push_back(c.c_str());
    sbsrl_compare_args args;
    sbsrl_compare_args_init(&args);
    args.config_paths = paths.data();
    args.n_configs = paths.size();
    args.baseline = no_baseline ? 0 : 1;
    args.ablation = ablation.empty() ? nullptr : ablation.data();
    args.n_ablation = ablation.size();
    args.seeds = cmp_seeds.empty() ? nullptr : cmp_seeds.c_str();
    args.has_master_seed = has_master ? 1 : 0;
    args.master_seed = master;
    args.parallelism = cmp_parallelism;
    args.time_budget_s = cmp_budget;
    const sbsrl_status s = sbsrl_compare(&args, cmp_out.c_str());
    if (compare_json) {
      const std::string path = cmp_out + "/summary.json";
      if (std::FILE* f = std::fopen(path.c_str(), "rb")) {
        char buf[4096];
        std::size_t n;
        while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) std::fwrite(buf, 1, n, stdout);
        std::fclose(f);
      }
    } else if (s == SBSRL_OK) {
      std::printf("wrote %s/episodes.csv, summary.json, bars.svg\n", cmp_out.c_str());
    }
    return report(s, "compare");
  }
  return 2;
}
