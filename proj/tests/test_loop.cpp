#include <doctest.h>

#include "oracles.hpp"
#include "sbsrl/config.hpp"
#include "sbsrl/error.hpp"
#include "sbsrl/loop.hpp"

#include <chrono>

using namespace sbsrl;

namespace {

RunConfig smoke() {
  ExperimentConfig e = load_experiment_config(SBSRL_SOURCE_DIR "/configs/smoke.cfg");
  e.run.seed = 11;
  return e.run;
}

bool same_logs(const std::vector<EpisodeLog>& a, const std::vector<EpisodeLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].j_r_true != b[i].j_r_true || a[i].j_c_true != b[i].j_c_true ||
        a[i].planned_score != b[i].planned_score || a[i].n_data != b[i].n_data) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("d_sigma schedule per mode") {
  RunConfig cfg = smoke();
  cfg.dsigma_mode = DsigmaMode::Theory;
  cfg.epsilon = 3.0;
  const double b = 1.7;
  CHECK(dsigma_schedule(4, cfg, b) ==
        doctest::Approx(oracle::dsigma(3.0, cfg.env.noise_std, cfg.env.g_max(), cfg.env.horizon, b))
            .epsilon(1e-12));
  cfg.dsigma_mode = DsigmaMode::Fixed;
  cfg.dsigma_value = 0.25;
  CHECK(dsigma_schedule(4, cfg, b) == 0.25);
  cfg.dsigma_mode = DsigmaMode::Zero;
  CHECK(dsigma_schedule(4, cfg, b) == 0.0);
  CHECK(parse_dsigma_mode("fixed") == DsigmaMode::Fixed);
  CHECK_THROWS(parse_dsigma_mode("sometimes"));
}

TEST_CASE("sample count: explicit or budgeted") {
  RunConfig cfg = smoke();
  cfg.n_samples = 7;
  CHECK(resolve_sample_count(cfg) == 7);
  cfg.n_samples = 0;
  cfg.sample_cap = 3;
  CHECK(resolve_sample_count(cfg) == 3);
}

TEST_CASE("config validation rejects out-of-range theory parameters") {
  RunConfig cfg = smoke();
  cfg.delta = 0.9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = smoke();
  cfg.kernel = KernelSpec::isotropic(KernelKind::SquaredExponential, 3, 1.0, 1.0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = smoke();
  cfg.warm_margin = 1.0;
  cfg.zeta = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.zeta = 1e-9;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("smoke run is deterministic and grows the data set") {
  const RunConfig cfg = smoke();
  std::vector<EpisodeLog> seen;
  const RunResult a = sbsrl_run(cfg, [&](const EpisodeLog& l) { seen.push_back(l); });
  const RunResult b = sbsrl_run(cfg);
  CHECK(same_logs(a.episodes, b.episodes));
  CHECK(same_logs(a.episodes, seen));
  CHECK(a.final_plan.actions == b.final_plan.actions);
  CHECK(a.episodes.size() <= static_cast<std::size_t>(cfg.max_episodes));
  for (std::size_t i = 1; i < a.data_sizes.size(); ++i) {
    CHECK(a.data_sizes[i] >= a.data_sizes[i - 1]);
  }
  CHECK(a.n_samples == 2);
  CHECK(a.delta_zeta ==
        doctest::Approx(oracle::tightening(cfg.zeta, cfg.env.d_x, cfg.env.horizon, cfg.env.c_max(),
                                           cfg.env.noise_std))
            .epsilon(1e-12));
}

TEST_CASE("different seeds give different runs") {
  RunConfig cfg = smoke();
  const RunResult a = sbsrl_run(cfg);
  cfg.seed = 12;
  const RunResult b = sbsrl_run(cfg);
  CHECK_FALSE(same_logs(a.episodes, b.episodes));
}

TEST_CASE("mean-only kind is the baseline run") {
  RunConfig cfg = smoke();
  cfg.kind = RunKind::MeanOnly;
  const RunResult a = sbsrl_run(cfg);
  const RunResult b = baseline_mean_run(smoke());
  CHECK(same_logs(a.episodes, b.episodes));
  CHECK(a.n_samples == 1);
  CHECK(a.delta_zeta == 0.0);
}

TEST_CASE("an unreachable exploration threshold terminates at the first episode") {
  RunConfig cfg = smoke();
  cfg.dsigma_value = 1e6;
  const RunResult r = sbsrl_run(cfg);
  CHECK(r.reason == TerminationReason::ExplorationInfeasible);
  CHECK(r.termination_episode == 0);
  REQUIRE(r.episodes.size() == 1);
  CHECK(r.episodes[0].terminated);
  CHECK_FALSE(r.episodes[0].feasible_explore);
  CHECK(r.final_eval.j_r == r.episodes[0].j_r_true);
}

TEST_CASE("relaxing instead of terminating keeps running") {
  RunConfig cfg = smoke();
  cfg.dsigma_value = 1e6;
  cfg.terminate_on_infeasible = false;
  const RunResult r = sbsrl_run(cfg);
  CHECK(r.reason == TerminationReason::MaxEpisodes);
  CHECK(r.episodes.size() == static_cast<std::size_t>(cfg.max_episodes));
}

TEST_CASE("zero d_sigma never probes and runs every episode") {
  RunConfig cfg = smoke();
  cfg.dsigma_mode = DsigmaMode::Zero;
  const RunResult r = sbsrl_run(cfg);
  CHECK(r.reason == TerminationReason::MaxEpisodes);
  CHECK(r.termination_episode == cfg.max_episodes);
  for (const auto& l : r.episodes) CHECK(l.d_sigma_n == 0.0);
}

TEST_CASE("a passed deadline aborts with BudgetExceeded") {
  RunConfig cfg = smoke();
  cfg.deadline = std::chrono::steady_clock::now() - std::chrono::seconds(1);
  CHECK_THROWS_AS(sbsrl_run(cfg), BudgetExceeded);
}

TEST_CASE("an unsafe warm start is a configuration error") {
  RunConfig cfg = smoke();
  cfg.env.cost_budget = 1e-6;
  CHECK_THROWS_AS(sbsrl_run(cfg), ConfigError);
}
