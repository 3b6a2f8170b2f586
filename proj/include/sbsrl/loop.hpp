#pragma once

#include "sbsrl/envs.hpp"
#include "sbsrl/planner.hpp"
#include "sbsrl/sampler.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sbsrl {

enum class DsigmaMode { Theory, Fixed, Zero };
enum class RunKind { Sbsrl, MeanOnly };
enum class TerminationReason { MaxEpisodes, ExplorationInfeasible };

std::string_view to_string(DsigmaMode mode);
DsigmaMode parse_dsigma_mode(std::string_view name);
std::string_view to_string(RunKind kind);
RunKind parse_run_kind(std::string_view name);
std::string_view to_string(TerminationReason reason);

struct RunConfig {
  EnvSpec env = EnvSpec::pendulum();
  // Simulator whose one-step prediction is the GP prior mean.
  EnvSpec nominal = EnvSpec::pendulum();
  bool nominal_prior = true;
  KernelSpec kernel;
  double rkhs_bound = 1.0;

  double delta = 0.1;
  double zeta = 1e-6;
  double epsilon = 1.0;
  double beta_scale = 1.0;  // multiplies beta_n
  std::optional<double> warm_margin;  // Delta of the safe warm start, if known

  int n_samples = 30;  // 0 selects the sample budget
  std::int64_t sample_cap = 64;
  SmallBallConfig small_ball;
  SampleKind sample_kind = SampleKind::RandomFeatures;
  std::size_t n_features = 256;
  bool resample_each_episode = false;
  bool terminate_on_infeasible = true;  // otherwise drop the exploration constraint

  DsigmaMode dsigma_mode = DsigmaMode::Theory;
  double dsigma_value = 0.0;
  RunKind kind = RunKind::Sbsrl;
  int max_episodes = 30;
  std::uint64_t seed = 1;

  IcemParams icem;
  IcemParams probe_icem;
  McConfig mc;
  double lambda_c = -1.0;      // negative selects 100 R_max T
  double lambda_sigma = -1.0;  // negative selects 10 R_max T
  double feasibility_tol = 1e-3;  // relative to the budget d

  PdGains warm_gains;
  int warm_rollouts = 1;
  double warm_action_noise = 0.0;
  int points_per_episode = 0;  // 0 keeps every transition
  int eval_rollouts = 200;
  // Plans are re-checked on fresh noise with this many rollouts per sample;
  // failing plans are pulled toward the warm start in `certify_steps` steps.
  int certify_rollouts = 16;
  int certify_steps = 8;
  int replan_every = 0;        // > 0 re-plans every k steps during execution
  bool check_warm_start = true;
  bool record_wall_time = false;
  // Checked before each episode; passing it throws BudgetExceeded.
  std::optional<std::chrono::steady_clock::time_point> deadline;

  // Test hooks: force the tightening and the band width of sample layers.
  std::optional<double> tightening_override;
  std::optional<double> sample_beta_override;

  double budget() const { return env.cost_budget; }
  PriorSpec prior() const;
  PenaltyWeights penalty_weights() const;
  // Throws ConfigError naming the violated invariant.
  void validate() const;
};

struct EpisodeLog {
  int episode = 0;
  double planned_score = 0.0;
  double j_r_planned = 0.0;
  Vec j_c_planned;
  double j_s_planned = 0.0;
  double j_r_true = 0.0;
  double j_r_true_se = 0.0;
  double j_c_true = 0.0;
  double j_c_true_se = 0.0;
  double executed_reward = 0.0;
  double executed_cost = 0.0;
  double max_inst_cost = 0.0;
  double beta_n = 0.0;
  double d_sigma_n = 0.0;
  double delta_zeta = 0.0;
  bool feasible_safe = true;
  bool feasible_explore = true;
  bool terminated = false;
  bool fallback = false;
  std::size_t n_data = 0;
  double wall_time_s = 0.0;
};

struct RunResult {
  std::vector<EpisodeLog> episodes;
  ActionPlan final_plan;
  PolicyEvaluation final_eval;
  TerminationReason reason = TerminationReason::MaxEpisodes;
  int termination_episode = -1;
  std::int64_t n_samples = 0;
  double delta_zeta = 0.0;
  std::shared_ptr<const GpPosterior> final_gp;
  std::vector<std::size_t> data_sizes;  // GP size at the start of each episode
};

using EpisodeSink = std::function<void(const EpisodeLog&)>;

// d_sigma^n for the configured mode.
double dsigma_schedule(int n, const RunConfig& cfg, double beta_n);

// Sample count implied by the config (explicit, or budgeted and capped).
std::int64_t resolve_sample_count(const RunConfig& cfg);

RunResult sbsrl_run(const RunConfig& cfg, const EpisodeSink& sink = {});

// Same loop with the cost constraint on the posterior mean only: one sample
// clipped to a zero-width band and no tightening.
RunResult baseline_mean_run(const RunConfig& cfg, const EpisodeSink& sink = {});

// Open-loop plan as a policy.
Policy plan_policy(const ActionPlan& plan);

}  // namespace sbsrl
