#include <doctest.h>

#include "sbsrl/envs.hpp"
#include "sbsrl/error.hpp"

#include <cmath>
#include <numbers>

using namespace sbsrl;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec v1(double a) { return Vec::Constant(1, a); }

EnvSpec small_synthetic(double reward, double cost) {
  const KernelSpec k = KernelSpec::isotropic(KernelKind::SquaredExponential, 2, 1.0, 1.0);
  Rng rng(3);
  auto e = std::make_shared<const KernelExpansion>(KernelExpansion::random(k, 10, 1, 1.0, -1, 1, rng));
  EnvSpec s = EnvSpec::synthetic(e, 1, 1, 15, 0.1);
  s.synthetic_reward = reward;
  s.synthetic_cost = cost;
  return s;
}

}  // namespace

TEST_CASE("kind defaults") {
  const EnvSpec p = EnvSpec::pendulum();
  CHECK(p.cost_budget == 6.0);
  CHECK(p.horizon == 100);
  CHECK(p.phys.dt == 0.05);
  CHECK(p.action_hi(0) == 2.0);
  const EnvSpec c = EnvSpec::cartpole();
  CHECK(c.cost_budget == 1.5);
  CHECK(c.horizon == 200);
  CHECK(c.action_hi(0) == 10.0);
  CHECK(parse_env_kind("synthetic-rkhs") == EnvKind::SyntheticRkhs);
  CHECK_THROWS_AS(parse_env_kind("hopper"), InputError);
}

TEST_CASE("pendulum hanging equilibrium is a fixed point") {
  const EnvSpec p = EnvSpec::pendulum();
  const Vec next = true_dynamics(p, v2(std::numbers::pi, 0.0), v1(0.0));
  CHECK(std::abs(next(0) - std::numbers::pi) < 1e-12);
  CHECK(std::abs(next(1)) < 1e-12);
}

TEST_CASE("pendulum integrator conserves energy within 1% over 100 steps") {
  const EnvSpec p = EnvSpec::pendulum();
  for (double th0 : {std::numbers::pi - 1.0, std::numbers::pi - 2.0, 0.5}) {
    Vec x = v2(th0, 0.0);
    // Energy above the hanging minimum.
    const double floor = -p.phys.mass * p.phys.gravity * p.phys.length;
    const double e0 = pendulum_energy(p, x) - floor;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      x = true_dynamics(p, x, v1(0.0));
      worst = std::max(worst, std::abs(pendulum_energy(p, x) - floor - e0));
    }
    CHECK(worst <= 0.01 * e0);
  }
}

TEST_CASE("noise: zero noise is exact, otherwise residual std matches") {
  EnvSpec p = EnvSpec::pendulum();
  const Vec x = v2(2.0, 0.5), a = v1(0.3);
  Rng rng(1);
  p.noise_std = 0.0;
  CHECK(env_step(p, x, a, rng).next_state == true_dynamics(p, x, a));
  p.noise_std = 0.05;
  const Vec f = true_dynamics(p, x, a);
  const int n = 2000;
  Vec sum = Vec::Zero(2), sq = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec r = env_step(p, x, a, rng).next_state - f;
    sum += r;
    sq += r.cwiseAbs2();
  }
  for (int j = 0; j < 2; ++j) {
    const double mean = sum(j) / n;
    const double sd = std::sqrt(sq(j) / n - mean * mean);
    CHECK(sd >= 0.9 * p.noise_std);
    CHECK(sd <= 1.1 * p.noise_std);
  }
}

TEST_CASE("reset: canonical start, reproducibility, empirical mean") {
  EnvSpec p = EnvSpec::pendulum();
  Rng a(5), b(5);
  CHECK(env_reset(p, a) == env_reset(p, b));
  p.init_std.setZero();
  Rng c(9);
  CHECK(env_reset(p, c) == p.init_mean);

  EnvSpec q = EnvSpec::pendulum();
  q.init_std = v2(0.3, 0.2);
  Rng d(7);
  const int n = 1000;
  Vec mean = Vec::Zero(2);
  for (int i = 0; i < n; ++i) mean += env_reset(q, d) / n;
  for (int j = 0; j < 2; ++j) CHECK(std::abs(mean(j) - q.init_mean(j)) < 3.0 * q.init_std(j) / std::sqrt(n));
}

TEST_CASE("reward and cost formulas") {
  const EnvSpec p = EnvSpec::pendulum();
  const Vec up = v2(p.theta_target, 0.0);
  CHECK(raw_reward(p, up, v1(0.0)) == 0.0);
  CHECK(env_reward(p, up, v1(0.0)) == doctest::Approx(p.r_max));
  CHECK(env_cost(p, up, v1(0.0)) == 0.0);
  // r = -(dtheta^2 + 0.1 omega^2 + 0.02 u^2)
  CHECK(raw_reward(p, v2(0.5, 2.0), v1(1.0)) == doctest::Approx(-(0.25 + 0.4 + 0.02)));
  CHECK(env_cost(p, v2(0.5, -2.0), v1(1.0)) == doctest::Approx(2.0 * p.phys.dt));

  const EnvSpec c = EnvSpec::cartpole();
  Vec x(4);
  x << 0.5, 1.0, c.theta_target + 0.2, -1.0;
  CHECK(raw_reward(c, x, v1(2.0)) ==
        doctest::Approx(-(0.04 + 0.25 + 0.1 * (1.0 + 1.0)) - 0.04));
  CHECK(env_cost(c, x, v1(2.0)) == doctest::Approx(0.5 * c.phys.dt));
}

TEST_CASE("normalized reward stays in [0, r_max] and cost is nonnegative") {
  for (const EnvSpec& s : {EnvSpec::pendulum(), EnvSpec::cartpole()}) {
    Rng rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 500; ++i) {
      Vec x(s.d_x), a(s.d_a);
      for (int j = 0; j < s.d_x; ++j) x(j) = 1.5 * s.state_bound(j) * u(rng);
      for (int j = 0; j < s.d_a; ++j) a(j) = s.action_hi(j) * u(rng);
      const double r = env_reward(s, x, a);
      CHECK(r >= 0.0);
      CHECK(r <= s.r_max);
      CHECK(env_cost(s, x, a) >= 0.0);
    }
  }
}

TEST_CASE("synthetic kind evaluates the stored expansion") {
  const EnvSpec s = small_synthetic(0.0, 1.0);
  Vec z(2);
  z << 0.2, -0.4;
  CHECK(true_dynamics(s, z) == s.expansion->eval(z));
  CHECK(s.expansion->rkhs_norms()(0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("policy evaluation: degenerate reward and cost") {
  const EnvSpec s = small_synthetic(0.0, 1.0);
  Rng rng(1);
  const Policy zero = [](const Vec&, int) { return v1(0.0); };
  const PolicyEvaluation ev = evaluate_policy_true(s, zero, 20, rng);
  CHECK(ev.j_r == 0.0);
  CHECK(ev.j_c == static_cast<double>(s.horizon));
  CHECK(ev.j_c_se == 0.0);
}

TEST_CASE("policy evaluation is self-consistent across independent streams") {
  const EnvSpec p = EnvSpec::pendulum();
  const Policy pol = [](const Vec& x, int t) { return v1(std::sin(0.3 * t) - 0.2 * x(1)); };
  Rng a(100), b(200);
  const PolicyEvaluation e1 = evaluate_policy_true(p, pol, 2000, a);
  const PolicyEvaluation e2 = evaluate_policy_true(p, pol, 2000, b);
  CHECK(std::abs(e1.j_r - e2.j_r) <= 3.0 * std::hypot(e1.j_r_se, e2.j_r_se) + 1e-12);
  CHECK(std::abs(e1.j_c - e2.j_c) <= 3.0 * std::hypot(e1.j_c_se, e2.j_c_se) + 1e-12);
}

TEST_CASE("input encoding round-trips") {
  const EnvSpec c = EnvSpec::cartpole();
  Vec x(4), a(1);
  x << 0.3, -0.2, 2.5, 1.1;
  a << 4.0;
  const Vec z = encode_input(c, x, a);
  CHECK(static_cast<std::size_t>(z.size()) == encoded_dim(c));
  Vec xr, ar;
  decode_input(c, z, xr, ar);
  CHECK((xr - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ar - a).cwiseAbs().maxCoeff() < 1e-12);
  const Vec next = true_dynamics(c, x, a);
  CHECK((apply_model_output(c, x, model_target(c, x, next)) - next).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nominal mean with true parameters reproduces the dynamics") {
  const EnvSpec p = EnvSpec::pendulum();
  const MeanFunction m = nominal_mean(p);
  const Vec x = v2(1.0, -0.5), a = v1(0.7);
  const Vec pred = apply_model_output(p, x, m(encode_input(p, x, a)));
  CHECK((pred - true_dynamics(p, x, a)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("non-finite states are rejected") {
  const EnvSpec p = EnvSpec::pendulum();
  CHECK_THROWS(true_dynamics(p, v2(std::nan(""), 0.0), v1(0.0)));
}
