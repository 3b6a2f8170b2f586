#include "sbsrl/envs.hpp"

#include "sbsrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sbsrl {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite state");
}

Vec pendulum_step(const EnvSpec& s, const Vec& x, double u) {
  const auto& p = s.phys;
  const double inertia = p.mass * p.length * p.length;
  auto accel = [&](double th) { return p.gravity / p.length * std::sin(th) + u / inertia; };
  // Velocity Verlet.
  const double w_half = x(1) + 0.5 * p.dt * accel(x(0));
  const double th = x(0) + p.dt * w_half;
  const double w = w_half + 0.5 * p.dt * accel(th);
  Vec out(2);
  out << th, w;
  return out;
}

Vec cartpole_step(const EnvSpec& s, const Vec& x, double force) {
  const auto& p = s.phys;
  const double total = p.mass + p.cart_mass;
  const double pm_l = p.mass * p.length;
  double pos = x(0), vel = x(1), th = x(2), w = x(3);
  const int n = std::max(1, p.substeps);
  const double h = p.dt / n;
  for (int k = 0; k < n; ++k) {
    const double st = std::sin(th), ct = std::cos(th);
    const double temp = (force + pm_l * w * w * st) / total;
    const double th_acc =
        (p.gravity * st - ct * temp) / (p.length * (4.0 / 3.0 - p.mass * ct * ct / total));
    const double x_acc = temp - pm_l * th_acc * ct / total;
    // Semi-implicit Euler.
    vel += h * x_acc;
    pos += h * vel;
    w += h * th_acc;
    th += h * w;
  }
  Vec out(4);
  out << pos, vel, th, w;
  return out;
}

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::Pendulum:
      return "pendulum";
    case EnvKind::Cartpole:
      return "cartpole";
    case EnvKind::SyntheticRkhs:
      return "synthetic-rkhs";
  }
  return "?";
}

EnvKind parse_env_kind(std::string_view name) {
  if (name == "pendulum") return EnvKind::Pendulum;
  if (name == "cartpole") return EnvKind::Cartpole;
  if (name == "synthetic-rkhs" || name == "synthetic") return EnvKind::SyntheticRkhs;
  throw InputError("unknown environment kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

Vec KernelExpansion::eval(const Vec& z) const {
  return eval_batch(z.transpose()).row(0).transpose();
}

Mat KernelExpansion::eval_batch(const Mat& z) const {
  return kernel_matrix(kernel, z, centers) * weights;
}

Vec KernelExpansion::rkhs_norms() const {
  const Mat k = kernel_matrix(kernel, centers, centers);
  Vec out(weights.cols());
  for (Eigen::Index j = 0; j < weights.cols(); ++j) {
    out(j) = std::sqrt(std::max(weights.col(j).dot(k * weights.col(j)), 0.0));
  }
  return out;
}

KernelExpansion KernelExpansion::random(const KernelSpec& kernel, std::size_t n_centers,
                                        std::size_t output_dim, double rkhs_norm, double lo,
                                        double hi, Rng& rng) {
  kernel.validate();
  if (n_centers == 0 || output_dim == 0) throw InputError("expansion: empty shape");
  KernelExpansion e;
  e.kernel = kernel;
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto c = static_cast<Eigen::Index>(n_centers);
  e.centers.resize(c, static_cast<Eigen::Index>(kernel.input_dim()));
  for (Eigen::Index i = 0; i < e.centers.size(); ++i) e.centers.data()[i] = u(rng);
  e.weights.resize(c, static_cast<Eigen::Index>(output_dim));
  for (Eigen::Index i = 0; i < e.weights.size(); ++i) e.weights.data()[i] = n(rng);
  const Vec norms = e.rkhs_norms();
  for (Eigen::Index j = 0; j < e.weights.cols(); ++j) {
    if (norms(j) > 0.0) e.weights.col(j) *= rkhs_norm / norms(j);
  }
  return e;
}

// ---------------------------------------------------------------------------

EnvSpec EnvSpec::pendulum() {
  EnvSpec s;
  s.kind = EnvKind::Pendulum;
  s.d_x = 2;
  s.d_a = 1;
  s.horizon = 100;
  s.noise_std = 0.02;
  s.cost_budget = 6.0;
  s.phys = PhysicalParams{1.0, 1.0, 9.81, 0.05, 1.0, 1};
  s.action_lo = Vec::Constant(1, -2.0);
  s.action_hi = Vec::Constant(1, 2.0);
  s.state_bound = (Vec(2) << kPi, 8.0).finished();
  s.init_mean = (Vec(2) << kPi, 0.0).finished();
  s.init_std = (Vec(2) << 0.05, 0.0).finished();
  s.theta_target = 0.0;
  return s;
}

EnvSpec EnvSpec::cartpole() {
  EnvSpec s;
  s.kind = EnvKind::Cartpole;
  s.d_x = 4;
  s.d_a = 1;
  s.horizon = 200;
  s.noise_std = 0.02;
  s.cost_budget = 1.5;
  s.phys = PhysicalParams{0.1, 0.5, 9.81, 0.05, 1.0, 2};
  s.action_lo = Vec::Constant(1, -10.0);
  s.action_hi = Vec::Constant(1, 10.0);
  s.state_bound = (Vec(4) << 3.0, 5.0, kPi, 10.0).finished();
  s.init_mean = (Vec(4) << 0.0, 0.0, kPi, 0.0).finished();
  s.init_std = (Vec(4) << 0.0, 0.0, 0.05, 0.0).finished();
  s.theta_target = 0.0;
  return s;
}

EnvSpec EnvSpec::synthetic(std::shared_ptr<const KernelExpansion> expansion, int d_x, int d_a,
                           int horizon, double noise_std) {
  EnvSpec s;
  s.kind = EnvKind::SyntheticRkhs;
  s.d_x = d_x;
  s.d_a = d_a;
  s.horizon = horizon;
  s.noise_std = noise_std;
  s.cost_budget = static_cast<double>(horizon);
  s.phys.dt = 1.0;
  s.action_lo = Vec::Constant(d_a, -1.0);
  s.action_hi = Vec::Constant(d_a, 1.0);
  s.state_bound = Vec::Constant(d_x, 1.0);
  s.init_mean = Vec::Zero(d_x);
  s.init_std = Vec::Zero(d_x);
  s.expansion = std::move(expansion);
  return s;
}

void EnvSpec::validate() const {
  if (horizon < 1) throw InputError("env: horizon T must be >= 1");
  if (noise_std < 0.0) throw InputError("env: noise std must be >= 0");
  if (d_x < 1 || d_a < 1) throw InputError("env: d_x and d_a must be >= 1");
  if (action_lo.size() != d_a || action_hi.size() != d_a) {
    throw InputError("env: action bounds must have d_a entries");
  }
  if ((action_lo.array() > action_hi.array()).any()) {
    throw InputError("env: action lower bound exceeds upper bound");
  }
  if (init_mean.size() != d_x || init_std.size() != d_x || state_bound.size() != d_x) {
    throw InputError("env: initial-state and state-bound vectors must have d_x entries");
  }
  if (!(phys.dt > 0.0)) throw InputError("env: dt must be positive");
  if (!(cost_budget >= 0.0)) throw InputError("env: cost budget must be nonnegative");
  if (kind == EnvKind::Pendulum && (d_x != 2 || d_a != 1)) {
    throw InputError("env: pendulum has d_x = 2, d_a = 1");
  }
  if (kind == EnvKind::Cartpole && (d_x != 4 || d_a != 1)) {
    throw InputError("env: cartpole has d_x = 4, d_a = 1");
  }
  if (kind == EnvKind::SyntheticRkhs) {
    if (!expansion) throw InputError("env: synthetic kind needs a kernel expansion");
    if (expansion->kernel.input_dim() != static_cast<std::size_t>(d_x + d_a) ||
        expansion->weights.cols() != d_x) {
      throw InputError("env: kernel expansion shape does not match (d_x, d_a)");
    }
  }
}

double EnvSpec::c_max() const {
  switch (kind) {
    case EnvKind::Pendulum:
      return state_bound(1) * phys.dt;
    case EnvKind::Cartpole:
      return state_bound(0) * phys.dt;
    case EnvKind::SyntheticRkhs:
      return std::abs(synthetic_cost);
  }
  return 0.0;
}

double EnvSpec::raw_reward_min() const {
  const double u = std::max(action_lo.cwiseAbs().maxCoeff(), action_hi.cwiseAbs().maxCoeff());
  switch (kind) {
    case EnvKind::Pendulum:
      return -(kPi * kPi + 0.1 * state_bound(1) * state_bound(1) + 0.02 * u * u);
    case EnvKind::Cartpole:
      return -(kPi * kPi + state_bound(0) * state_bound(0) +
               0.1 * (state_bound(1) * state_bound(1) + state_bound(3) * state_bound(3))) -
             0.01 * u * u;
    case EnvKind::SyntheticRkhs:
      return 0.0;
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

Vec clamp_action(const EnvSpec& spec, const Vec& a) {
  if (a.size() != spec.d_a) throw InputError("env: action dimension mismatch");
  return a.cwiseMax(spec.action_lo).cwiseMin(spec.action_hi);
}

Vec env_reset(const EnvSpec& spec, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec x = spec.init_mean;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    // Draw unconditionally so streams stay aligned across std settings.
    const double e = n(rng);
    x(i) += spec.init_std(i) * e;
  }
  return x;
}

Vec true_dynamics(const EnvSpec& spec, const Vec& x, const Vec& a) {
  if (x.size() != spec.d_x || a.size() != spec.d_a) {
    throw InputError("true_dynamics: state/action dimension mismatch");
  }
  require_finite(x, "true_dynamics");
  require_finite(a, "true_dynamics");
  Vec next;
  switch (spec.kind) {
    case EnvKind::Pendulum:
      next = pendulum_step(spec, x, a(0));
      break;
    case EnvKind::Cartpole:
      next = cartpole_step(spec, x, a(0));
      break;
    case EnvKind::SyntheticRkhs: {
      Vec z(spec.d_x + spec.d_a);
      z << x, a;
      next = spec.expansion->eval(z);
      break;
    }
  }
  require_finite(next, "true_dynamics");
  return next;
}

Vec true_dynamics(const EnvSpec& spec, const Vec& z) {
  if (z.size() != spec.d_x + spec.d_a) throw InputError("true_dynamics: z dimension mismatch");
  return true_dynamics(spec, Vec(z.head(spec.d_x)), Vec(z.tail(spec.d_a)));
}

double raw_reward(const EnvSpec& spec, const Vec& x, const Vec& a) {
  switch (spec.kind) {
    case EnvKind::Pendulum: {
      const double dth = wrap_angle(x(0) - spec.theta_target);
      return -(dth * dth + 0.1 * x(1) * x(1) + 0.02 * a(0) * a(0));
    }
    case EnvKind::Cartpole: {
      const double dth = wrap_angle(x(2) - spec.theta_target);
      return -(dth * dth + x(0) * x(0) + 0.1 * (x(1) * x(1) + x(3) * x(3))) -
             0.01 * a(0) * a(0);
    }
    case EnvKind::SyntheticRkhs:
      return spec.synthetic_reward;
  }
  return 0.0;
}

double env_reward(const EnvSpec& spec, const Vec& x, const Vec& a) {
  if (spec.kind == EnvKind::SyntheticRkhs) return spec.synthetic_reward;
  const double lo = spec.raw_reward_min();
  const double r = (raw_reward(spec, x, a) - lo) / (0.0 - lo) * spec.r_max;
  return std::clamp(r, 0.0, spec.r_max);
}

double env_cost(const EnvSpec& spec, const Vec& x, const Vec& /*a*/) {
  switch (spec.kind) {
    case EnvKind::Pendulum:
      return std::abs(x(1)) * spec.phys.dt;
    case EnvKind::Cartpole:
      return std::abs(x(0)) * spec.phys.dt;
    case EnvKind::SyntheticRkhs:
      return spec.synthetic_cost;
  }
  return 0.0;
}

Transition env_step(const EnvSpec& spec, const Vec& x, const Vec& a, Rng& rng) {
  Transition t;
  t.state = x;
  t.action = clamp_action(spec, a);
  t.next_state = true_dynamics(spec, x, t.action);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < t.next_state.size(); ++i) {
    t.next_state(i) += spec.noise_std * n(rng);
  }
  require_finite(t.next_state, "env_step");
  t.reward = env_reward(spec, x, t.action);
  t.cost = env_cost(spec, x, t.action);
  return t;
}

double pendulum_energy(const EnvSpec& spec, const Vec& x) {
  const auto& p = spec.phys;
  return 0.5 * p.mass * p.length * p.length * x(1) * x(1) +
         p.mass * p.gravity * p.length * std::cos(x(0));
}

PolicyEvaluation evaluate_policy_true(const EnvSpec& spec, const Policy& policy, int n_rollouts,
                                      Rng& rng) {
  if (n_rollouts < 1) throw InputError("evaluate_policy_true: need at least one rollout");
  PolicyEvaluation ev;
  std::vector<double> jr, jc;
  jr.reserve(static_cast<std::size_t>(n_rollouts));
  jc.reserve(static_cast<std::size_t>(n_rollouts));
  for (int k = 0; k < n_rollouts; ++k) {
    Vec x = env_reset(spec, rng);
    double r = 0.0, c = 0.0, cmax = 0.0;
    for (int t = 0; t < spec.horizon; ++t) {
      const Transition tr = env_step(spec, x, policy(x, t), rng);
      r += tr.reward;
      c += tr.cost;
      cmax = std::max(cmax, tr.cost);
      x = tr.next_state;
    }
    jr.push_back(r);
    jc.push_back(c);
    ev.max_cost.push_back(cmax);
  }
  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    const double n = static_cast<double>(v.size());
    mean = 0.0;
    for (double e : v) mean += e;
    mean /= n;
    double ss = 0.0;
    for (double e : v) ss += (e - mean) * (e - mean);
    se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  };
  mean_se(jr, ev.j_r, ev.j_r_se);
  mean_se(jc, ev.j_c, ev.j_c_se);
  double unused = 0.0;
  mean_se(ev.max_cost, ev.mean_max_cost, unused);
  return ev;
}

// ---------------------------------------------------------------------------

std::size_t encoded_dim(const EnvSpec& spec) {
  switch (spec.kind) {
    case EnvKind::Pendulum:
      return 4;
    case EnvKind::Cartpole:
      return 6;
    case EnvKind::SyntheticRkhs:
      return static_cast<std::size_t>(spec.d_x + spec.d_a);
  }
  return 0;
}

Vec encode_input(const EnvSpec& spec, const Vec& x, const Vec& a) {
  switch (spec.kind) {
    case EnvKind::Pendulum:
      return (Vec(4) << std::sin(x(0)), std::cos(x(0)), x(1), a(0)).finished();
    case EnvKind::Cartpole:
      return (Vec(6) << x(0), x(1), std::sin(x(2)), std::cos(x(2)), x(3), a(0)).finished();
    case EnvKind::SyntheticRkhs: {
      Vec z(spec.d_x + spec.d_a);
      z << x, a;
      return z;
    }
  }
  return {};
}

void decode_input(const EnvSpec& spec, const Vec& z, Vec& x, Vec& a) {
  switch (spec.kind) {
    case EnvKind::Pendulum:
      x = (Vec(2) << std::atan2(z(0), z(1)), z(2)).finished();
      a = z.tail(1);
      return;
    case EnvKind::Cartpole:
      x = (Vec(4) << z(0), z(1), std::atan2(z(2), z(3)), z(4)).finished();
      a = z.tail(1);
      return;
    case EnvKind::SyntheticRkhs:
      x = z.head(spec.d_x);
      a = z.tail(spec.d_a);
      return;
  }
}

Vec model_target(const EnvSpec& spec, const Vec& x, const Vec& x_next) {
  if (spec.kind == EnvKind::SyntheticRkhs) return x_next;
  return x_next - x;
}

Vec apply_model_output(const EnvSpec& spec, const Vec& x, const Vec& output) {
  if (spec.kind == EnvKind::SyntheticRkhs) return output;
  return x + output;
}

MeanFunction nominal_mean(const EnvSpec& nominal) {
  if (nominal.kind == EnvKind::SyntheticRkhs) {
    return MeanFunction::zero(static_cast<std::size_t>(nominal.d_x));
  }
  return MeanFunction::custom(
      static_cast<std::size_t>(nominal.d_x),
      [nominal](const Vec& z) {
        Vec x, a;
        decode_input(nominal, z, x, a);
        return Vec(true_dynamics(nominal, x, a) - x);
      },
      "nominal");
}

Vec pd_stabilizer(const EnvSpec& spec, const Vec& x, const PdGains& g) {
  Vec u(spec.d_a);
  switch (spec.kind) {
    case EnvKind::Pendulum:
      u(0) = -g.kp * wrap_angle(x(0) - kPi) - g.kd * x(1);
      break;
    case EnvKind::Cartpole:
      u(0) = -g.kp * x(0) - g.kd * x(1);
      break;
    case EnvKind::SyntheticRkhs:
      u.setZero();
      break;
  }
  return clamp_action(spec, u);
}

}  // namespace sbsrl
