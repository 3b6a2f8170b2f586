#pragma once

#include "sbsrl/config.hpp"
#include "sbsrl/loop.hpp"

#include <chrono>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

namespace sbsrl {

inline constexpr const char* kVersion = "0.1.0";

// One line of episodes.csv. `config` is only written by compare.
struct CsvRow {
  std::string config;
  std::uint64_t seed = 0;
  int episode = 0;
  double j_r_true = 0.0;
  double j_c_true = 0.0;
  double max_inst_cost = 0.0;
  double j_s_planned = 0.0;
  double beta_n = 0.0;
  double d_sigma_n = 0.0;
  double delta_zeta = 0.0;
  bool feasible_safe = true;
  bool feasible_explore = true;
  bool terminated = false;
  double wall_time_s = 0.0;
};

const std::vector<std::string>& csv_columns();
std::string csv_header(bool with_config);
std::string format_csv_row(const CsvRow& row, bool with_config);
CsvRow csv_row_from_log(std::uint64_t seed, const EpisodeLog& log);

// Throws ConfigError naming a missing column or a malformed cell.
std::vector<CsvRow> parse_episodes_csv(const std::string& text, const std::string& origin);
std::vector<CsvRow> read_episodes_csv(const std::string& path);

struct SeedOutcome {
  std::uint64_t seed = 0;  // label from the seed list
  std::uint64_t loop_seed = 0;
  bool completed = false;
  std::string error;
  std::exception_ptr failure;
  std::vector<EpisodeLog> logs;
  std::optional<RunResult> result;
};

struct ExperimentOutcome {
  std::string name;
  RunConfig run;  // as executed, before the per-seed seed
  std::uint64_t master_seed = 0;
  std::vector<SeedOutcome> seeds;  // in seed-list order
};

struct RunOverrides {
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::uint64_t> master_seed;
  std::optional<int> parallelism;
  std::optional<double> wall_clock_budget_s;
};

void apply_overrides(ExperimentConfig& cfg, const RunOverrides& ov);

// Runs every seed with a bounded worker pool. Never throws for per-seed
// failures; they are recorded in the outcome. `deadline` overrides the
// config's own wall-clock budget.
ExperimentOutcome run_experiment(
    const ExperimentConfig& cfg,
    std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

std::vector<CsvRow> outcome_rows(const ExperimentOutcome& out, const std::string& config = {});
std::string run_summary_json(const ExperimentOutcome& out);
std::string compare_summary_json(const std::vector<ExperimentOutcome>& outs);

// Rethrows the most severe per-seed failure: BudgetExceeded first, then the
// first failure in seed order.
void rethrow_failures(const std::vector<ExperimentOutcome>& outs);

// run: episodes.csv, summary.json, reward.svg, cost.svg in `out_dir`.
// Writes partial results before rethrowing a failure.
ExperimentOutcome cmd_run(const ExperimentConfig& cfg, const std::string& out_dir);

struct CompareOptions {
  bool baseline = true;
  std::vector<double> ablation;  // fixed d_sigma values
  RunOverrides overrides;
};

// compare: variants of each config, merged into one CSV with a config column.
std::vector<ExperimentOutcome> cmd_compare(const std::vector<std::string>& config_paths,
                                           const CompareOptions& opt, const std::string& out_dir);

enum class PlotKind { Curves, Bars };
PlotKind parse_plot_kind(std::string_view name);

// SVG documents; `budget` draws the cost rule.
std::string svg_curves(const std::vector<CsvRow>& rows, bool cost, double budget);
std::string svg_bars(const std::vector<CsvRow>& rows, double budget);

// plot: reads a CSV and writes SVG files into `out_dir`. A missing budget is
// read from summary.json next to the CSV. Returns the written paths.
std::vector<std::string> cmd_plot(const std::string& csv_path, PlotKind kind,
                                  const std::string& out_dir, std::optional<double> budget);

struct BudgetRequest {
  double delta = 0.1;
  double zeta = 0.1;
  double rkhs_bound = 1.0;
  int d_x = 1;
  KernelSpec kernel = KernelSpec::isotropic(KernelKind::SquaredExponential, 1, 1.0, 1.0);
  SmallBallConfig small_ball;
  std::optional<double> exponent_override;  // replaces d_x (B^2 / 2 + phi) outright
  std::int64_t cap = 1'000'000'000;
};

struct BudgetReport {
  std::int64_t m = 1;
  bool capped = false;
  double log_m = 0.0;
  double phi_hat = 0.0;
  double exponent = 0.0;  // d_x (B^2 / 2 + phi)
  BudgetRequest request;
};

BudgetReport cmd_budget(const BudgetRequest& req);
std::string budget_json(const BudgetReport& report);
std::string budget_text(const BudgetReport& report);

}  // namespace sbsrl
