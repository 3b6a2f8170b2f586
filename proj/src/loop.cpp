#include "sbsrl/loop.hpp"

#include "sbsrl/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace sbsrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Batch {
  Mat z;
  Mat y;
};

void push_row(Batch& b, const Vec& z, const Vec& y) {
  const Eigen::Index n = b.z.rows();
  b.z.conservativeResize(n + 1, z.size());
  b.y.conservativeResize(n + 1, y.size());
  b.z.row(n) = z.transpose();
  b.y.row(n) = y.transpose();
}

// Greedy max-variance thinning, then an append-only update so every earlier
// posterior stays an exact prefix of the new one.
std::shared_ptr<const GpPosterior> append_data(const std::shared_ptr<const GpPosterior>& gp,
                                               const Batch& b, int n_episodes, int keep) {
  if (b.z.rows() == 0) return gp;
  if (keep <= 0 || b.z.rows() <= keep) {
    return std::make_shared<const GpPosterior>(gp->extended(b.z, b.y, n_episodes));
  }
  const Mat cov = gp->covariance(b.z);
  auto sel = greedy_select(cov, gp->prior().noise_std, static_cast<std::size_t>(keep)).indices;
  std::sort(sel.begin(), sel.end());
  Mat z(static_cast<Eigen::Index>(sel.size()), b.z.cols());
  Mat y(static_cast<Eigen::Index>(sel.size()), b.y.cols());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) = b.z.row(static_cast<Eigen::Index>(sel[i]));
    y.row(static_cast<Eigen::Index>(i)) = b.y.row(static_cast<Eigen::Index>(sel[i]));
  }
  return std::make_shared<const GpPosterior>(gp->extended(z, y, n_episodes));
}

double elapsed_s(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

class Runner {
 public:
  Runner(const RunConfig& cfg, bool mean_only, const EpisodeSink& sink)
      : cfg_(cfg), env_(cfg.env), mean_only_(mean_only), sink_(sink) {}

  RunResult run();

 private:
  void refresh_samples(int episode, double beta_n);
  std::vector<double> score_plans(GpPlanningModel& model, const std::vector<ActionPlan>& plans,
                                  std::uint64_t noise_seed, const Thresholds& th, double d_sigma,
                                  bool explore, const RolloutStart& start);
  struct Planned {
    ActionPlan plan;
    ReturnEstimates est;
    double score = kNegInf;
    bool fallback = false;
  };
  Planned plan_episode(GpPlanningModel& model, int episode, double d_sigma, bool explore,
                       std::string_view tag);
  ActionPlan execute(const ActionPlan& plan, int episode, Batch& data,
                     double& reward, double& cost);
  double layer_beta(double beta_n) const {
    if (mean_only_) return 0.0;
    return cfg_.sample_beta_override ? *cfg_.sample_beta_override : beta_n;
  }

  const RunConfig& cfg_;
  const EnvSpec& env_;
  bool mean_only_;
  const EpisodeSink& sink_;

  PriorSpec prior_;
  PenaltyWeights weights_;
  Thresholds th_;
  std::int64_t m_ = 1;
  std::shared_ptr<const GpPosterior> gp_prior_;
  std::shared_ptr<const GpPosterior> gp_;
  std::vector<DynamicsSample> samples_;
  ActionPlan warm_plan_;
  ActionPlan prev_plan_;
};

void Runner::refresh_samples(int episode, double beta_n) {
  const double b = layer_beta(beta_n);
  if (mean_only_ || cfg_.resample_each_episode) {
    samples_.clear();
    const std::int64_t count = mean_only_ ? 1 : m_;
    for (std::int64_t m = 0; m < count; ++m) {
      const auto seed = derive_seed(cfg_.seed, "posterior-sample", static_cast<std::uint64_t>(episode),
                                    static_cast<std::uint64_t>(m));
      DynamicsSample s =
          DynamicsSample::posterior_features(gp_, seed, cfg_.n_features, static_cast<int>(m));
      s.truncate(gp_, b);
      samples_.push_back(std::move(s));
    }
    return;
  }
  for (auto& s : samples_) s.truncate(gp_, b);
}

std::vector<double> Runner::score_plans(GpPlanningModel& model,
                                        const std::vector<ActionPlan>& plans,
                                        std::uint64_t noise_seed, const Thresholds& th,
                                        double d_sigma, bool explore,
                                        const RolloutStart& start) {
  const auto ests = estimate_returns_batch(model, env_, plans, cfg_.mc, noise_seed, start);
  std::vector<double> out(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    out[i] = penalized_score(ests[i], th.budget, th.tightening, d_sigma, weights_, explore);
  }
  return out;
}

Runner::Planned Runner::plan_episode(GpPlanningModel& model, int episode, double d_sigma,
                                     bool explore, std::string_view tag) {
  const auto ep = static_cast<std::uint64_t>(episode);
  const std::uint64_t noise_seed = derive_seed(cfg_.seed, std::string(tag) + "-noise", ep);
  BatchScore scorer = [&](const std::vector<ActionPlan>& plans) {
    return score_plans(model, plans, noise_seed, th_, d_sigma, explore, {});
  };
  Rng rng = make_rng(cfg_.seed, std::string(tag) + "-search", ep);
  const IcemResult r =
      icem_plan(scorer, env_, env_.horizon, cfg_.icem, {prev_plan_, warm_plan_}, rng);
  Planned out;
  out.score = r.best_score;
  if (r.all_invalid) {
    out.fallback = true;
    out.plan = warm_plan_;
    out.est = estimate_returns(out.plan, model, env_, cfg_.mc, noise_seed);
    return out;
  }
  if (cfg_.certify_rollouts <= 0) {
    out.plan = r.best;
    out.est = estimate_returns(out.plan, model, env_, cfg_.mc, noise_seed);
    if (!plan_is_safe(out.est, th_)) {
      out.fallback = true;
      out.plan = warm_plan_;
      out.est = estimate_returns(out.plan, model, env_, cfg_.mc, noise_seed);
    }
    return out;
  }
  // Fresh-noise check of the winner and of its blends with the warm start,
  // largest step first.
  McConfig check = cfg_.mc;
  check.n_cost = cfg_.certify_rollouts;
  const int steps = std::max(cfg_.certify_steps, 1);
  std::vector<ActionPlan> line;
  for (int k = steps; k >= 0; --k) {
    const double w = static_cast<double>(k) / steps;
    line.push_back(ActionPlan{warm_plan_.actions + w * (r.best.actions - warm_plan_.actions)});
  }
  const auto ests = estimate_returns_batch(model, env_, line, check,
                                           derive_seed(cfg_.seed, std::string(tag) + "-check", ep));
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (plan_is_safe(ests[i], th_)) {
      out.plan = line[i];
      out.est = ests[i];
      out.fallback = i == line.size() - 1 && steps > 0 && i != 0;
      if (i != 0) out.score = penalized_score(ests[i], th_.budget, th_.tightening, d_sigma, weights_, explore);
      return out;
    }
  }
  out.fallback = true;
  out.plan = warm_plan_;
  out.est = ests.back();
  out.score = penalized_score(out.est, th_.budget, th_.tightening, d_sigma, weights_, explore);
  return out;
}

ActionPlan Runner::execute(const ActionPlan& plan, int episode, Batch& data,
                           double& reward, double& cost) {
  const auto ep = static_cast<std::uint64_t>(episode);
  Rng rng = make_rng(cfg_.seed, "env", ep);
  ActionPlan executed = plan;
  Vec x = env_reset(env_, rng);
  reward = 0.0;
  cost = 0.0;
  for (int t = 0; t < env_.horizon; ++t) {
    if (cfg_.replan_every > 0 && t > 0 && t % cfg_.replan_every == 0) {
      // Re-plan the remaining steps from the observed state against the
      // remaining budget, on the model built at the start of the episode.
      const int rest = env_.horizon - t;
      GpPlanningModel model(env_, gp_, &samples_);
      Thresholds th = th_;
      th.budget = th_.budget - cost;
      const RolloutStart start{x};
      const std::uint64_t noise_seed = derive_seed(cfg_.seed, "replan-noise", ep,
                                                   static_cast<std::uint64_t>(t));
      BatchScore scorer = [&](const std::vector<ActionPlan>& plans) {
        return score_plans(model, plans, noise_seed, th, 0.0, false, start);
      };
      ActionPlan tail{executed.actions.bottomRows(rest)};
      Rng search = make_rng(cfg_.seed, "replan-search", ep, static_cast<std::uint64_t>(t));
      const IcemResult r = icem_plan(scorer, env_, rest, cfg_.icem, {tail}, search);
      const ReturnEstimates est = estimate_returns(r.best, model, env_, cfg_.mc, noise_seed, start);
      if (!r.all_invalid && plan_is_safe(est, th)) executed.actions.bottomRows(rest) = r.best.actions;
    }
    const Vec a = executed.actions.row(t).transpose();
    const Transition tr = env_step(env_, x, a, rng);
    reward += tr.reward;
    cost += tr.cost;
    push_row(data, encode_input(env_, tr.state, tr.action),
             model_target(env_, tr.state, tr.next_state));
    x = tr.next_state;
  }
  return executed;
}

RunResult Runner::run() {
  cfg_.validate();
  prior_ = cfg_.prior();
  weights_ = cfg_.penalty_weights();
  const int T = env_.horizon;
  const double d = cfg_.budget();
  th_.budget = d;
  th_.tol = cfg_.feasibility_tol * d;
  if (mean_only_) {
    th_.tightening = 0.0;
  } else if (cfg_.tightening_override) {
    th_.tightening = *cfg_.tightening_override;
  } else {
    th_.tightening = tightening_delta(cfg_.zeta, env_.d_x, T, env_.c_max(), prior_.noise_std);
  }
  m_ = mean_only_ ? 1 : resolve_sample_count(cfg_);

  RunResult result;
  result.n_samples = m_;
  result.delta_zeta = th_.tightening;

  // Offline data from the PD stabilizer with optional action noise.
  gp_prior_ = std::make_shared<const GpPosterior>(prior_, cfg_.kernel);
  gp_ = gp_prior_;
  {
    Rng rng = make_rng(cfg_.seed, "warm-data");
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int r = 0; r < cfg_.warm_rollouts; ++r) {
      Batch data;
      Vec x = env_reset(env_, rng);
      for (int t = 0; t < T; ++t) {
        Vec a = pd_stabilizer(env_, x, cfg_.warm_gains);
        for (Eigen::Index j = 0; j < a.size(); ++j) a(j) += cfg_.warm_action_noise * noise(rng);
        const Transition tr = env_step(env_, x, clamp_action(env_, a), rng);
        push_row(data, encode_input(env_, tr.state, tr.action),
                 model_target(env_, tr.state, tr.next_state));
        x = tr.next_state;
      }
      gp_ = append_data(gp_, data, 0, cfg_.points_per_episode);
    }
  }

  const auto& pm = prior_.mean;
  warm_plan_ = stabilizer_plan(env_, cfg_.warm_gains, [&](const Vec& x, const Vec& a) {
    return apply_model_output(env_, x, pm(encode_input(env_, x, a)));
  });
  prev_plan_ = warm_plan_;

  if (!mean_only_ && !cfg_.resample_each_episode) {
    for (std::int64_t m = 0; m < m_; ++m) {
      const auto seed = derive_seed(cfg_.seed, "prior-sample", 0, static_cast<std::uint64_t>(m));
      DynamicsSample s =
          cfg_.sample_kind == SampleKind::Pathwise
              ? DynamicsSample::pathwise(prior_, cfg_.kernel, seed, static_cast<int>(m))
              : DynamicsSample::random_features(prior_, cfg_.kernel, seed, cfg_.n_features,
                                                static_cast<int>(m));
      s.truncate(gp_prior_, prior_.rkhs_bound);
      samples_.push_back(std::move(s));
    }
  }

  bool explore = cfg_.dsigma_mode != DsigmaMode::Zero;
  for (int n = 0; n < cfg_.max_episodes; ++n) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg_.deadline && t0 > *cfg_.deadline) {
      throw BudgetExceeded("wall-clock budget exhausted before episode " + std::to_string(n));
    }
    const auto ep = static_cast<std::uint64_t>(n);
    result.data_sizes.push_back(gp_->size());
    EpisodeLog log;
    log.episode = n;
    log.beta_n =
        cfg_.beta_scale * beta(n, T, prior_, cfg_.delta, gp_->information_gain(), env_.d_x);
    log.d_sigma_n = dsigma_schedule(n, cfg_, log.beta_n);
    log.delta_zeta = th_.tightening;
    th_.d_sigma = log.d_sigma_n;
    refresh_samples(n, log.beta_n);
    GpPlanningModel model(env_, gp_, &samples_);

    if (n == 0 && cfg_.check_warm_start && !mean_only_) {
      const double margin = cfg_.warm_margin ? *cfg_.warm_margin : th_.tightening;
      const ReturnEstimates est = estimate_returns(warm_plan_, model, env_, cfg_.mc,
                                                   derive_seed(cfg_.seed, "warm-check"));
      if (!est.valid || est.max_cost() > d - margin) {
        throw ConfigError("warm-start plan is not safe: max sampled cost return " +
                          std::to_string(est.max_cost()) + " exceeds d - margin = " +
                          std::to_string(d - margin));
      }
    }

    if (explore && log.d_sigma_n > 0.0) {
      const FeasibilityResult fr =
          feasibility_probe(model, env_, th_, weights_, cfg_.probe_icem, cfg_.mc,
                            {warm_plan_, prev_plan_}, derive_seed(cfg_.seed, "probe", ep));
      log.feasible_safe = fr.safe_feasible;
      log.feasible_explore = fr.explore_feasible;
      if (!fr.explore_feasible) {
        if (cfg_.terminate_on_infeasible) {
          result.reason = TerminationReason::ExplorationInfeasible;
          result.termination_episode = n;
          Planned g = plan_episode(model, n, 0.0, false, "greedy");
          result.final_plan = g.plan;
          Rng eval_rng = make_rng(cfg_.seed, "eval", ep);
          result.final_eval = evaluate_policy_true(env_, plan_policy(g.plan), cfg_.eval_rollouts,
                                                   eval_rng);
          log.planned_score = g.score;
          log.j_r_planned = g.est.j_r;
          log.j_c_planned = g.est.j_c;
          log.j_s_planned = g.est.j_s;
          log.fallback = g.fallback;
          log.j_r_true = result.final_eval.j_r;
          log.j_r_true_se = result.final_eval.j_r_se;
          log.j_c_true = result.final_eval.j_c;
          log.j_c_true_se = result.final_eval.j_c_se;
          log.max_inst_cost = result.final_eval.mean_max_cost;
          log.terminated = true;
          log.n_data = gp_->size();
          log.wall_time_s = cfg_.record_wall_time ? elapsed_s(t0) : 0.0;
          result.episodes.push_back(log);
          if (sink_) sink_(log);
          result.final_gp = gp_;
          return result;
        }
        explore = false;
      }
    }

    Planned p = plan_episode(model, n, log.d_sigma_n, explore, "plan");
    if (!explore || log.d_sigma_n <= 0.0) log.feasible_safe = plan_is_safe(p.est, th_);
    log.planned_score = p.score;
    log.j_r_planned = p.est.j_r;
    log.j_c_planned = p.est.j_c;
    log.j_s_planned = p.est.j_s;
    log.fallback = p.fallback;

    Batch data;
    const ActionPlan executed =
        execute(p.plan, n, data, log.executed_reward, log.executed_cost);
    Rng eval_rng = make_rng(cfg_.seed, "eval", ep);
    const PolicyEvaluation ev =
        evaluate_policy_true(env_, plan_policy(executed), cfg_.eval_rollouts, eval_rng);
    log.j_r_true = ev.j_r;
    log.j_r_true_se = ev.j_r_se;
    log.j_c_true = ev.j_c;
    log.j_c_true_se = ev.j_c_se;
    log.max_inst_cost = ev.mean_max_cost;

    gp_ = append_data(gp_, data, n + 1, cfg_.points_per_episode);
    prev_plan_ = executed;
    log.n_data = gp_->size();
    log.wall_time_s = cfg_.record_wall_time ? elapsed_s(t0) : 0.0;
    result.episodes.push_back(log);
    if (sink_) sink_(log);
  }

  // Episode budget exhausted: deploy the greedy safe plan on the final model.
  const int n = cfg_.max_episodes;
  const double b = beta(n, T, prior_, cfg_.delta, gp_->information_gain(), env_.d_x);
  refresh_samples(n, b);
  GpPlanningModel model(env_, gp_, &samples_);
  Planned g = plan_episode(model, n, 0.0, false, "greedy");
  result.reason = TerminationReason::MaxEpisodes;
  result.termination_episode = n;
  result.final_plan = g.plan;
  Rng eval_rng = make_rng(cfg_.seed, "eval", static_cast<std::uint64_t>(n));
  result.final_eval =
      evaluate_policy_true(env_, plan_policy(g.plan), cfg_.eval_rollouts, eval_rng);
  result.final_gp = gp_;
  return result;
}

}  // namespace

std::string_view to_string(DsigmaMode mode) {
  switch (mode) {
    case DsigmaMode::Theory:
      return "theory";
    case DsigmaMode::Fixed:
      return "fixed";
    case DsigmaMode::Zero:
      return "zero";
  }
  return "?";
}

DsigmaMode parse_dsigma_mode(std::string_view name) {
  if (name == "theory") return DsigmaMode::Theory;
  if (name == "fixed") return DsigmaMode::Fixed;
  if (name == "zero") return DsigmaMode::Zero;
  throw InputError("unknown d_sigma mode '" + std::string(name) + "'");
}

std::string_view to_string(RunKind kind) {
  return kind == RunKind::Sbsrl ? "sbsrl" : "mean-only";
}

RunKind parse_run_kind(std::string_view name) {
  if (name == "sbsrl") return RunKind::Sbsrl;
  if (name == "mean-only") return RunKind::MeanOnly;
  throw InputError("unknown run kind '" + std::string(name) + "'");
}

std::string_view to_string(TerminationReason reason) {
  return reason == TerminationReason::MaxEpisodes ? "max-episodes" : "exploration-infeasible";
}

PriorSpec RunConfig::prior() const {
  PriorSpec p;
  p.mean = nominal_prior ? nominal_mean(nominal)
                         : MeanFunction::zero(static_cast<std::size_t>(env.d_x));
  p.rkhs_bound = rkhs_bound;
  p.noise_std = env.noise_std;
  return p;
}

PenaltyWeights RunConfig::penalty_weights() const {
  const double scale = env.r_max * env.horizon;
  return PenaltyWeights{lambda_c >= 0.0 ? lambda_c : 100.0 * scale,
                        lambda_sigma >= 0.0 ? lambda_sigma : 10.0 * scale};
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  try {
    env.validate();
    if (nominal_prior) nominal.validate();
    kernel.validate();
    icem.validate();
    probe_icem.validate();
    mc.validate();
  } catch (const InputError& e) {
    fail(e.what());
  }
  if (nominal_prior && (nominal.kind != env.kind || nominal.d_x != env.d_x)) {
    fail("nominal model must match the environment kind");
  }
  if (!(delta > 0.0 && delta < 0.5)) fail("delta must lie in (0, 1/2)");
  if (!(rkhs_bound > 0.0)) fail("rkhs bound B must be positive");
  if (!(beta_scale > 0.0)) fail("beta_scale must be positive");
  if (!(env.noise_std > 0.0)) fail("noise std sigma_w must be positive");
  if (kernel.input_dim() != encoded_dim(env)) {
    fail("kernel lengthscales must have " + std::to_string(encoded_dim(env)) +
         " entries for this environment");
  }
  if (!tightening_override && !(zeta > 0.0)) fail("zeta must be positive");
  if (warm_margin) {
    if (!(*warm_margin > 0.0)) fail("warm-start margin Delta must be positive");
    const double bound = env.noise_std * *warm_margin /
                         (std::sqrt(static_cast<double>(env.d_x)) * env.horizon * env.horizon *
                          env.c_max());
    if (!tightening_override && !(zeta < bound)) {
      fail("zeta must lie in (0, sigma_w Delta / (sqrt(d_x) T^2 C_max)) = (0, " +
           std::to_string(bound) + ")");
    }
  }
  if (!(epsilon >= 0.0)) fail("epsilon must be nonnegative");
  if (max_episodes < 1) fail("max episodes must be >= 1");
  if (n_samples < 0) fail("sample count must be >= 0 (0 selects the budget)");
  if (sample_cap < 1) fail("sample cap must be >= 1");
  if (n_features < 1) fail("feature count must be >= 1");
  if (resample_each_episode && sample_kind == SampleKind::Pathwise) {
    fail("posterior resampling uses feature samples; pick rff or posterior-rff");
  }
  if (dsigma_mode == DsigmaMode::Fixed && !(dsigma_value >= 0.0)) {
    fail("fixed d_sigma must be nonnegative");
  }
  if (!(feasibility_tol >= 0.0)) fail("feasibility tolerance must be nonnegative");
  if (warm_rollouts < 0) fail("warm rollouts must be >= 0");
  if (points_per_episode < 0) fail("points per episode must be >= 0");
  if (eval_rollouts < 1) fail("eval rollouts must be >= 1");
  if (certify_rollouts < 0 || certify_steps < 0) fail("certification settings must be >= 0");
  if (replan_every < 0) fail("replan interval must be >= 0");
  if (sample_beta_override && !(*sample_beta_override >= 0.0)) {
    fail("sample beta override must be nonnegative");
  }
}

double dsigma_schedule(int /*n*/, const RunConfig& cfg, double beta_n) {
  switch (cfg.dsigma_mode) {
    case DsigmaMode::Theory:
      return exploration_threshold(cfg.epsilon, cfg.env.noise_std, cfg.env.g_max(),
                                   cfg.env.horizon, beta_n);
    case DsigmaMode::Fixed:
      return cfg.dsigma_value;
    case DsigmaMode::Zero:
      return 0.0;
  }
  return 0.0;
}

std::int64_t resolve_sample_count(const RunConfig& cfg) {
  if (cfg.n_samples > 0) return cfg.n_samples;
  BudgetInputs in;
  in.delta = cfg.delta;
  in.zeta = cfg.zeta;
  in.rkhs_bound = cfg.rkhs_bound;
  in.d_x = cfg.env.d_x;
  in.small_ball_exponent = small_ball_exponent(cfg.kernel, cfg.zeta, cfg.small_ball);
  return sample_budget(in, cfg.sample_cap).m;
}

RunResult sbsrl_run(const RunConfig& cfg, const EpisodeSink& sink) {
  return Runner(cfg, cfg.kind == RunKind::MeanOnly, sink).run();
}

RunResult baseline_mean_run(const RunConfig& cfg, const EpisodeSink& sink) {
  return Runner(cfg, true, sink).run();
}

Policy plan_policy(const ActionPlan& plan) {
  return [plan](const Vec&, int t) -> Vec { return plan.actions.row(t).transpose(); };
}

}  // namespace sbsrl
