#pragma once

#include "sbsrl/kernel_gp.hpp"
#include "sbsrl/rng.hpp"

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

namespace sbsrl {

enum class EnvKind { Pendulum, Cartpole, SyntheticRkhs };

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);

// f(z) = sum_i k(z, c_i) w_i, one weight column per output.
struct KernelExpansion {
  KernelSpec kernel;
  Mat centers;  // C x D
  Mat weights;  // C x d_out

  Vec eval(const Vec& z) const;
  Mat eval_batch(const Mat& z) const;
  Vec rkhs_norms() const;  // sqrt(w_j^T K w_j) per output

  // Random centers in [lo, hi]^D, weights rescaled to the given RKHS norm.
  static KernelExpansion random(const KernelSpec& kernel, std::size_t n_centers,
                                std::size_t output_dim, double rkhs_norm, double lo, double hi,
                                Rng& rng);
};

struct PhysicalParams {
  double mass = 1.0;        // pendulum bob / cartpole pole
  double length = 1.0;      // pendulum length / cartpole pole half-length
  double gravity = 9.81;
  double dt = 0.05;
  double cart_mass = 1.0;   // cartpole only
  int substeps = 2;         // cartpole integrator substeps
};

struct EnvSpec {
  EnvKind kind = EnvKind::Pendulum;
  int d_x = 2;
  int d_a = 1;
  int horizon = 100;
  double noise_std = 0.02;
  double cost_budget = 6.0;
  PhysicalParams phys;
  Vec action_lo;
  Vec action_hi;
  // Symmetric state box |x_i| <= bound_i used for reward normalization and
  // C_max. Angle coordinates are wrapped and ignore their entry.
  Vec state_bound;
  Vec init_mean;
  Vec init_std;
  double theta_target = 0.0;
  double r_max = 1.0;
  // Synthetic kernel-expansion ground truth.
  std::shared_ptr<const KernelExpansion> expansion;
  double synthetic_reward = 0.0;
  double synthetic_cost = 1.0;

  static EnvSpec pendulum();
  static EnvSpec cartpole();
  static EnvSpec synthetic(std::shared_ptr<const KernelExpansion> expansion, int d_x, int d_a,
                           int horizon, double noise_std);

  void validate() const;
  double c_max() const;
  double g_max() const { return std::max(c_max(), r_max); }
  double raw_reward_min() const;
};

struct Transition {
  Vec state;
  Vec action;
  Vec next_state;
  double reward = 0.0;
  double cost = 0.0;
};

Vec clamp_action(const EnvSpec& spec, const Vec& a);
Vec env_reset(const EnvSpec& spec, Rng& rng);

// Noise-free next-state mean f*(x, a). z stacks (x, a).
Vec true_dynamics(const EnvSpec& spec, const Vec& z);
Vec true_dynamics(const EnvSpec& spec, const Vec& x, const Vec& a);

Transition env_step(const EnvSpec& spec, const Vec& x, const Vec& a, Rng& rng);

double raw_reward(const EnvSpec& spec, const Vec& x, const Vec& a);
double env_reward(const EnvSpec& spec, const Vec& x, const Vec& a);  // in [0, r_max]
double env_cost(const EnvSpec& spec, const Vec& x, const Vec& a);

// Mechanical energy of the pendulum (theta = 0 upright).
double pendulum_energy(const EnvSpec& spec, const Vec& x);

using Policy = std::function<Vec(const Vec& x, int t)>;

struct PolicyEvaluation {
  double j_r = 0.0;
  double j_r_se = 0.0;
  double j_c = 0.0;
  double j_c_se = 0.0;
  std::vector<double> max_cost;  // per rollout
  double mean_max_cost = 0.0;
};

PolicyEvaluation evaluate_policy_true(const EnvSpec& spec, const Policy& policy,
                                      int n_rollouts, Rng& rng);

// ---------------------------------------------------------------------------
// GP-facing encoding. Inputs replace angles by (sin, cos); targets are state
// increments for the physical systems and raw next states for the synthetic
// kind.
// ---------------------------------------------------------------------------

std::size_t encoded_dim(const EnvSpec& spec);
Vec encode_input(const EnvSpec& spec, const Vec& x, const Vec& a);
void decode_input(const EnvSpec& spec, const Vec& z, Vec& x, Vec& a);
Vec model_target(const EnvSpec& spec, const Vec& x, const Vec& x_next);
Vec apply_model_output(const EnvSpec& spec, const Vec& x, const Vec& output);

// Prior mean from a simulator with (possibly mismatched) parameters.
MeanFunction nominal_mean(const EnvSpec& nominal);

struct PdGains {
  double kp = 0.0;
  double kd = 0.0;
};

// Stabilizer around the hanging equilibrium (cartpole: cart centered).
Vec pd_stabilizer(const EnvSpec& spec, const Vec& x, const PdGains& gains);

}  // namespace sbsrl
