#pragma once

#include "sbsrl/envs.hpp"
#include "sbsrl/sampler.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

namespace sbsrl {

// Open-loop action sequence, horizon x d_a.
struct ActionPlan {
  Mat actions;

  int horizon() const { return static_cast<int>(actions.rows()); }
  int action_dim() const { return static_cast<int>(actions.cols()); }
  static ActionPlan zeros(int horizon, int action_dim);
};

ActionPlan clamp_plan(const EnvSpec& spec, ActionPlan plan);

// Open-loop rollout of a PD stabilizer under the given one-step model.
ActionPlan stabilizer_plan(const EnvSpec& spec, const PdGains& gains,
                           const std::function<Vec(const Vec&, const Vec&)>& model);

struct Trajectory {
  Mat states;   // (T + 1) x d_x
  Mat actions;  // T x d_a
  Vec rewards;  // T
  Vec costs;    // T
  double reward_sum = 0.0;
  double cost_sum = 0.0;
  double max_cost = 0.0;
  bool valid = true;
};

// Next-state mean given (x, a).
using StepModel = std::function<Vec(const Vec& x, const Vec& a)>;

// x_{t+1} = model(x_t, a_t) + sigma_w noise. Rewards and costs are taken at
// (x_t, a_t), as in env_step. The first `horizon` rows of the plan are used.
Trajectory rollout_model(const EnvSpec& spec, const StepModel& model, const ActionPlan& plan,
                         const Vec& x0, int horizon, double sigma_w, Rng& rng);

enum class RolloutMode { PerSample, Ts1 };
enum class UncertaintyMetric { Epistemic, Combined };

std::string_view to_string(RolloutMode mode);
RolloutMode parse_rollout_mode(std::string_view name);
std::string_view to_string(UncertaintyMetric metric);
UncertaintyMetric parse_uncertainty_metric(std::string_view name);

struct McConfig {
  int n_mean = 5;  // rollouts under the posterior mean (J_r, J_s)
  int n_cost = 3;  // rollouts per dynamics sample (J_c)
  RolloutMode mode = RolloutMode::PerSample;
  UncertaintyMetric metric = UncertaintyMetric::Epistemic;
  void validate() const;
};

struct ReturnEstimates {
  double j_r = 0.0;
  double j_r_se = 0.0;
  Vec j_c;               // one entry per dynamics sample
  Vec j_c_se;
  double j_s = 0.0;
  double j_c_mean = 0.0;  // cost return under the posterior-mean rollouts
  double j_c_mean_se = 0.0;
  int n_mc = 0;
  bool valid = true;

  double max_cost() const { return j_c.size() ? j_c.maxCoeff() : 0.0; }
};

// One lockstep batch of particles: rows of (x, a) in, next-state means out.
struct StepBatch {
  Mat x;
  Mat a;
  Mat next;
  Vec stddev;  // per-row epistemic std, shared by all outputs
};

// Dynamics seen by the planner: the posterior mean plus M sampled models.
class PlanningModel {
 public:
  virtual ~PlanningModel() = default;
  virtual std::size_t n_samples() const = 0;
  virtual int state_dim() const = 0;
  // One step for every particle. `samples[m]` holds particles of sample m.
  // The mean batch always gets `stddev`. In TS1 mode sample rows get the
  // posterior mean and std instead of the sample's value; the caller adds
  // the per-step draw.
  virtual void step(StepBatch& mean, std::vector<StepBatch>& samples, RolloutMode mode) = 0;
};

// GP posterior plus truncated dynamics samples. Samples are borrowed.
class GpPlanningModel final : public PlanningModel {
 public:
  GpPlanningModel(const EnvSpec& env, std::shared_ptr<const GpPosterior> gp,
                  std::vector<DynamicsSample>* samples);
  std::size_t n_samples() const override;
  int state_dim() const override { return env_->d_x; }
  void step(StepBatch& mean, std::vector<StepBatch>& samples, RolloutMode mode) override;

 private:
  const EnvSpec* env_;
  std::shared_ptr<const GpPosterior> gp_;
  std::vector<DynamicsSample>* samples_;
};

// Model built from plain callables; used for oracles and mocks.
class FunctionPlanningModel final : public PlanningModel {
 public:
  using StdFn = std::function<double(const Vec& x, const Vec& a)>;
  FunctionPlanningModel(int d_x, StepModel mean, StdFn stddev, std::vector<StepModel> samples);
  std::size_t n_samples() const override { return samples_.size(); }
  int state_dim() const override { return d_x_; }
  void step(StepBatch& mean, std::vector<StepBatch>& samples, RolloutMode mode) override;

 private:
  int d_x_;
  StepModel mean_;
  StdFn stddev_;
  std::vector<StepModel> samples_;
};

// Where rollouts start. Without a fixed state, starts are drawn from the
// env's initial distribution.
struct RolloutStart {
  std::optional<Vec> state;
};

// Batched estimates for a population. Noise and initial states are common to
// all plans (seeded by `noise_seed`), so differences between plans are not
// masked by sampling noise.
std::vector<ReturnEstimates> estimate_returns_batch(PlanningModel& model, const EnvSpec& spec,
                                                    const std::vector<ActionPlan>& plans,
                                                    const McConfig& mc, std::uint64_t noise_seed,
                                                    const RolloutStart& start = {});

ReturnEstimates estimate_returns(const ActionPlan& plan, PlanningModel& model,
                                 const EnvSpec& spec, const McConfig& mc,
                                 std::uint64_t noise_seed, const RolloutStart& start = {});

struct PenaltyWeights {
  double lambda_c = 0.0;
  double lambda_sigma = 0.0;
};

// J_r - lambda_c sum_m max(J_c^m - d + tightening, 0) - lambda_sigma max(d_sigma - J_s, 0).
// The exploration term is dropped when `exploration_active` is false.
double penalized_score(const ReturnEstimates& est, double budget, double tightening,
                       double d_sigma, const PenaltyWeights& weights,
                       bool exploration_active = true);

struct IcemParams {
  int population = 256;
  double elite_fraction = 0.1;
  int iterations = 10;
  double init_std = 0.5;        // fraction of the half action range
  double noise_exponent = 2.0;  // colored-noise power-law exponent
  bool shift_elites = true;     // carry elites into the next iteration
  double keep_fraction = 0.3;   // share of elites carried over
  double momentum = 0.1;        // weight of the previous distribution
  double min_std = 1e-3;        // fraction of the half action range
  void validate() const;
  int n_elites() const;
};

struct IcemResult {
  ActionPlan best;
  double best_score = -std::numeric_limits<double>::infinity();
  ActionPlan mean;                  // final sampling mean (warm start for the next call)
  std::vector<double> best_history;  // best-ever score after each iteration
  std::vector<double> elite_mean_history;
  int evaluations = 0;
  bool all_invalid = false;
};

using BatchScore = std::function<std::vector<double>(const std::vector<ActionPlan>&)>;

// Cross-entropy search over action sequences of length `horizon` within the
// env's action box. Extra candidates (warm starts) join the first population.
IcemResult icem_plan(const BatchScore& score, const EnvSpec& spec, int horizon,
                     const IcemParams& params, const std::vector<ActionPlan>& warm_starts,
                     Rng& rng);

IcemResult icem_plan(const std::function<double(const ActionPlan&)>& score, const EnvSpec& spec,
                     const IcemParams& params, const std::optional<ActionPlan>& warm_start,
                     Rng& rng);

// Unit-variance power-law noise, one column per sequence.
Mat colored_noise(int length, int n_sequences, double exponent, Rng& rng);

struct Thresholds {
  double budget = 0.0;      // d
  double tightening = 0.0;  // Delta_zeta
  double d_sigma = 0.0;
  double tol = 0.0;
};

struct FeasibilityResult {
  bool safe_feasible = false;
  bool explore_feasible = false;
  double best_safe_uncertainty = -std::numeric_limits<double>::infinity();
  ActionPlan best_safe_plan;
  int evaluations = 0;
};

// Maximizes J_s under the safety penalty and reports whether a safe
// candidate exists and whether the best safe one reaches d_sigma.
FeasibilityResult feasibility_probe(PlanningModel& model, const EnvSpec& spec,
                                    const Thresholds& thresholds, const PenaltyWeights& weights,
                                    const IcemParams& params, const McConfig& mc,
                                    const std::vector<ActionPlan>& warm_starts,
                                    std::uint64_t seed, const RolloutStart& start = {});

bool plan_is_safe(const ReturnEstimates& est, const Thresholds& thresholds);

}  // namespace sbsrl
