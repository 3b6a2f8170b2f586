#include <doctest.h>

#include "sbsrl/error.hpp"
#include "sbsrl/planner.hpp"

#include <cmath>
#include <numbers>

using namespace sbsrl;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

EnvSpec pendulum_t(int horizon, double noise) {
  EnvSpec p = EnvSpec::pendulum();
  p.horizon = horizon;
  p.noise_std = noise;
  return p;
}

ActionPlan wave(int horizon, double amp) {
  ActionPlan p = ActionPlan::zeros(horizon, 1);
  for (int t = 0; t < horizon; ++t) p.actions(t, 0) = amp * std::sin(0.4 * t);
  return p;
}

FunctionPlanningModel true_model(const EnvSpec& env, int n_samples, double stddev) {
  StepModel f = [env](const Vec& x, const Vec& a) { return true_dynamics(env, x, a); };
  return FunctionPlanningModel(
      env.d_x, f, [stddev](const Vec&, const Vec&) { return stddev; },
      std::vector<StepModel>(static_cast<std::size_t>(n_samples), f));
}

}  // namespace

TEST_CASE("rollout: identity model, empty plan, true dynamics") {
  const EnvSpec p = pendulum_t(10, 0.0);
  Rng rng(1);
  const Vec x0 = (Vec(2) << 2.0, 0.3).finished();
  const Trajectory id =
      rollout_model(p, [](const Vec& x, const Vec&) { return x; }, wave(10, 1.0), x0, 10, 0.0, rng);
  for (Eigen::Index t = 0; t <= 10; ++t) CHECK(id.states.row(t).transpose() == x0);

  const Trajectory empty = rollout_model(p, [](const Vec& x, const Vec&) { return x; },
                                         ActionPlan::zeros(0, 1), x0, 0, 0.0, rng);
  CHECK(empty.reward_sum == 0.0);
  CHECK(empty.cost_sum == 0.0);
  CHECK(empty.rewards.size() == 0);

  const ActionPlan plan = wave(10, 1.5);
  const Trajectory tr = rollout_model(
      p, [&](const Vec& x, const Vec& a) { return true_dynamics(p, x, a); }, plan, x0, 10, 0.0, rng);
  Vec x = x0;
  double r = 0.0, c = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Vec a = plan.actions.row(t).transpose();
    const Transition step = env_step(p, x, a, rng);
    CHECK((tr.states.row(t + 1).transpose() - step.next_state).cwiseAbs().maxCoeff() == 0.0);
    r += step.reward;
    c += step.cost;
    x = step.next_state;
  }
  CHECK(tr.reward_sum == doctest::Approx(r).epsilon(1e-14));
  CHECK(tr.cost_sum == doctest::Approx(c).epsilon(1e-14));
}

TEST_CASE("rollout: non-finite states mark the trajectory invalid") {
  const EnvSpec p = pendulum_t(5, 0.0);
  Rng rng(1);
  const Trajectory tr = rollout_model(
      p, [](const Vec& x, const Vec&) { return Vec::Constant(x.size(), std::nan("")); },
      wave(5, 1.0), Vec::Zero(2), 5, 0.0, rng);
  CHECK_FALSE(tr.valid);
  CHECK(tr.reward_sum == -std::numeric_limits<double>::infinity());
}

TEST_CASE("penalized score hinge arithmetic") {
  ReturnEstimates est;
  est.j_r = 7.0;
  est.j_s = 2.0;
  est.j_c = (Vec(2) << 3.0, 4.0).finished();
  const PenaltyWeights w{10.0, 5.0};
  CHECK(penalized_score(est, 6.0, 0.0, 1.0, w) == 7.0);
  est.j_c(1) = 7.0;  // one sample over budget by 1
  CHECK(penalized_score(est, 6.0, 0.0, 1.0, w) == doctest::Approx(-3.0));
  // Tightening shifts the hinge.
  CHECK(penalized_score(est, 6.0, 0.5, 1.0, w) == doctest::Approx(7.0 - 10.0 * 1.5 - 10.0 * 0.0));
  // Exploration hinge and its deactivation.
  est.j_c(1) = 4.0;
  CHECK(penalized_score(est, 6.0, 0.0, 3.0, w) == doctest::Approx(7.0 - 5.0));
  CHECK(penalized_score(est, 6.0, 0.0, 3.0, w, false) == 7.0);
  // Nonincreasing in each J_c^m.
  double prev = penalized_score(est, 6.0, 0.0, 1.0, w);
  for (double c = 4.0; c < 9.0; c += 0.25) {
    est.j_c(0) = c;
    const double s = penalized_score(est, 6.0, 0.0, 1.0, w);
    CHECK(s <= prev);
    prev = s;
  }
}

TEST_CASE("uncertainty return of the prior is T sqrt(d_x)") {
  const EnvSpec p = pendulum_t(12, 0.0);
  const KernelSpec k = KernelSpec::isotropic(KernelKind::SquaredExponential, encoded_dim(p), 1.0, 1.0);
  const PriorSpec prior{MeanFunction::zero(2), 1.0, 0.1};
  auto gp = std::make_shared<const GpPosterior>(prior, k);
  std::vector<DynamicsSample> samples{DynamicsSample::random_features(prior, k, 1)};
  GpPlanningModel model(p, gp, &samples);
  McConfig mc;
  mc.n_mean = 3;
  mc.n_cost = 1;
  const ReturnEstimates est = estimate_returns(wave(12, 1.0), model, p, mc, 5);
  CHECK(est.j_s == doctest::Approx(12.0 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("zero-width sample reproduces the mean-rollout cost") {
  const EnvSpec p = pendulum_t(20, 0.01);
  const KernelSpec k = KernelSpec::squared_exponential((Vec(4) << 1.0, 1.0, 2.0, 2.0).finished(), 0.01);
  const PriorSpec prior{nominal_mean(p), 1.0, 0.01};
  Rng rng(3);
  Mat z(15, static_cast<Eigen::Index>(encoded_dim(p))), y(15, 2);
  Vec x = p.init_mean;
  for (int i = 0; i < 15; ++i) {
    const Vec a = v1(std::sin(0.5 * i));
    const Transition t = env_step(p, x, a, rng);
    z.row(i) = encode_input(p, x, a).transpose();
    y.row(i) = model_target(p, x, t.next_state).transpose();
    x = t.next_state;
  }
  auto gp = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z, y));
  std::vector<DynamicsSample> samples{DynamicsSample::random_features(prior, k, 9)};
  samples[0].truncate(gp, 0.0);
  GpPlanningModel model(p, gp, &samples);
  McConfig mc;
  mc.n_mean = 30;
  mc.n_cost = 30;
  const ReturnEstimates est = estimate_returns(wave(20, 1.0), model, p, mc, 11);
  const double se = std::hypot(est.j_c_se(0), est.j_c_mean_se);
  CHECK(std::abs(est.j_c(0) - est.j_c_mean) <= 3.0 * se + 1e-9);
}

TEST_CASE("zero cost function gives zero cost returns") {
  const KernelSpec k = KernelSpec::isotropic(KernelKind::SquaredExponential, 2, 1.0, 1.0);
  Rng rng(3);
  auto e = std::make_shared<const KernelExpansion>(KernelExpansion::random(k, 8, 1, 1.0, -1, 1, rng));
  EnvSpec s = EnvSpec::synthetic(e, 1, 1, 8, 0.1);
  s.synthetic_cost = 0.0;
  auto model = true_model(s, 3, 0.1);
  const ReturnEstimates est = estimate_returns(ActionPlan::zeros(8, 1), model, s, McConfig{}, 1);
  CHECK(est.j_c.size() == 3);
  CHECK(est.j_c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("standard error shrinks like one over sqrt(n)") {
  const EnvSpec p = pendulum_t(30, 0.05);
  auto model = true_model(p, 1, 0.0);
  McConfig small, large;
  small.n_mean = 200;
  small.n_cost = 1;
  large = small;
  large.n_mean = 800;
  const ReturnEstimates a = estimate_returns(wave(30, 2.0), model, p, small, 1);
  const ReturnEstimates b = estimate_returns(wave(30, 2.0), model, p, large, 2);
  const double ratio = b.j_r_se / a.j_r_se;
  CHECK(ratio > 0.35);
  CHECK(ratio < 0.65);
}

TEST_CASE("iCEM recovers an analytic optimum") {
  EnvSpec p = pendulum_t(5, 0.0);
  const Vec target = (Vec(5) << 0.5, -1.2, 0.0, 1.7, -0.3).finished();
  auto score = [&](const ActionPlan& plan) { return -(plan.actions.col(0) - target).squaredNorm(); };
  IcemParams prm;
  prm.noise_exponent = 0.0;
  Rng rng(7);
  const IcemResult r = icem_plan(score, p, prm, std::nullopt, rng);
  CHECK((r.best.actions.col(0) - target).cwiseAbs().maxCoeff() < 0.05);
  for (std::size_t i = 1; i < r.best_history.size(); ++i) {
    CHECK(r.best_history[i] >= r.best_history[i - 1]);
  }
  Rng rng2(7);
  const IcemResult again = icem_plan(score, p, prm, std::nullopt, rng2);
  CHECK(again.best.actions == r.best.actions);
  CHECK(again.best_score == r.best_score);
}

TEST_CASE("colored-noise iCEM still improves monotonically") {
  EnvSpec p = pendulum_t(20, 0.0);
  auto score = [](const ActionPlan& plan) {
    double s = 0.0;
    for (int t = 0; t < plan.horizon(); ++t) s -= std::pow(plan.actions(t, 0) - std::sin(0.3 * t), 2);
    return s;
  };
  IcemParams prm;
  Rng rng(3);
  const IcemResult r = icem_plan(score, p, prm, std::nullopt, rng);
  for (std::size_t i = 1; i < r.best_history.size(); ++i) {
    CHECK(r.best_history[i] >= r.best_history[i - 1]);
  }
  CHECK(r.best_score > 0.5 * score(ActionPlan{Mat::Zero(20, 1)}));
}

TEST_CASE("iCEM with elites equal to the population") {
  EnvSpec p = pendulum_t(4, 0.0);
  IcemParams prm;
  prm.population = 16;
  prm.elite_fraction = 1.0;
  prm.iterations = 3;
  CHECK(prm.n_elites() == 16);
  Rng rng(1);
  const IcemResult r = icem_plan([](const ActionPlan& a) { return -a.actions.squaredNorm(); }, p,
                                 prm, std::nullopt, rng);
  CHECK(std::isfinite(r.best_score));
  CHECK(r.evaluations >= 16 * 3);
}

TEST_CASE("iCEM with only invalid candidates returns the warm start") {
  EnvSpec p = pendulum_t(4, 0.0);
  IcemParams prm;
  prm.population = 8;
  prm.iterations = 2;
  const ActionPlan warm = wave(4, 0.5);
  Rng rng(1);
  const IcemResult r = icem_plan(
      [](const ActionPlan&) { return -std::numeric_limits<double>::infinity(); }, p, prm, warm, rng);
  CHECK(r.all_invalid);
  CHECK(r.best.actions == warm.actions);
  CHECK(r.best_score == -std::numeric_limits<double>::infinity());
}

TEST_CASE("iCEM parameter validation") {
  IcemParams prm;
  prm.population = 0;
  CHECK_THROWS_AS(prm.validate(), InputError);
  prm = IcemParams{};
  prm.iterations = 0;
  CHECK_THROWS_AS(prm.validate(), InputError);
}

TEST_CASE("colored noise has unit variance and power-law correlation") {
  Rng rng(3);
  const int len = 40, n = 4000;
  for (double beta : {0.0, 1.0, 2.0}) {
    const Mat e = colored_noise(len, n, beta, rng);
    REQUIRE(e.rows() == len);
    REQUIRE(e.cols() == n);
    const double var = e.array().square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  }
  const Mat white = colored_noise(len, n, 0.0, rng);
  const Mat red = colored_noise(len, n, 2.0, rng);
  auto lag1 = [&](const Mat& m) {
    return (m.topRows(len - 1).array() * m.bottomRows(len - 1).array()).mean();
  };
  CHECK(std::abs(lag1(white)) < 0.1);
  CHECK(lag1(red) > 0.5);
}

TEST_CASE("feasibility probe") {
  const EnvSpec p = pendulum_t(15, 0.0);
  IcemParams prm;
  prm.population = 16;
  prm.iterations = 2;
  McConfig mc;
  mc.n_mean = 1;
  mc.n_cost = 1;
  const PenaltyWeights w{100.0, 10.0};

  SUBCASE("zero threshold is always explorable") {
    auto model = true_model(p, 2, 0.3);
    const Thresholds th{6.0, 0.0, 0.0, 6e-3};
    const FeasibilityResult r = feasibility_probe(model, p, th, w, prm, mc, {}, 1);
    CHECK(r.explore_feasible);
    CHECK(r.safe_feasible);
  }
  SUBCASE("known dynamics cannot be explored") {
    auto model = true_model(p, 2, 0.0);
    const Thresholds th{6.0, 0.0, 0.01, 6e-3};
    const FeasibilityResult r = feasibility_probe(model, p, th, w, prm, mc, {}, 1);
    CHECK(r.best_safe_uncertainty == 0.0);
    CHECK_FALSE(r.explore_feasible);
  }
  SUBCASE("the probe dominates the warm start's own uncertainty") {
    const KernelSpec k = KernelSpec::isotropic(KernelKind::SquaredExponential, encoded_dim(p), 1.0, 0.04);
    const PriorSpec prior{nominal_mean(p), 1.0, 0.01};
    auto gp = std::make_shared<const GpPosterior>(prior, k);
    std::vector<DynamicsSample> samples;
    for (int m = 0; m < 2; ++m) {
      samples.push_back(DynamicsSample::random_features(prior, k, 40 + static_cast<std::uint64_t>(m)));
      samples.back().truncate(gp, 1.0);
    }
    GpPlanningModel model(p, gp, &samples);
    const ActionPlan warm = ActionPlan::zeros(15, 1);
    const Thresholds th{6.0, 0.0, 1.0, 6e-3};
    const RolloutStart start{p.init_mean};
    const ReturnEstimates own = estimate_returns(warm, model, p, mc, 77, start);
    REQUIRE(plan_is_safe(own, th));
    const FeasibilityResult r = feasibility_probe(model, p, th, w, prm, mc, {warm}, 77, start);
    CHECK(r.safe_feasible);
    CHECK(r.best_safe_uncertainty >= own.j_s - 1e-12);
  }
}

TEST_CASE("plan safety uses the tightened budget plus tolerance") {
  ReturnEstimates est;
  est.j_c = (Vec(2) << 4.0, 5.0).finished();
  CHECK(plan_is_safe(est, Thresholds{6.0, 1.0, 0.0, 0.0}));
  CHECK_FALSE(plan_is_safe(est, Thresholds{6.0, 1.5, 0.0, 0.0}));
  CHECK(plan_is_safe(est, Thresholds{6.0, 1.5, 0.0, 0.6}));
}
