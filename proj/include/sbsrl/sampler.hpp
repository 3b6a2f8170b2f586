#pragma once

#include "sbsrl/kernel_gp.hpp"
#include "sbsrl/rng.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace sbsrl {

// One band [mu_i - beta_i sigma_i, mu_i + beta_i sigma_i] in a sample's stack.
struct TruncationLayer {
  std::shared_ptr<const GpPosterior> gp;
  double beta = 0.0;
};

enum class SampleKind {
  Pathwise,           // lazy sequential conditioning on the sample's own values
  RandomFeatures,     // global random-feature prior draw
  PosteriorFeatures,  // random-feature prior draw updated on data (Matheron's rule)
};

std::string_view to_string(SampleKind kind);
SampleKind parse_sample_kind(std::string_view name);

// A deterministic function realization f^m: R^{input_dim} -> R^{output_dim}.
//
// Values are raw draws clipped sequentially through every truncation layer.
// Pathwise samples mutate their conditioning cache on evaluation and must not
// be evaluated concurrently; feature samples are read-only after construction.
class DynamicsSample {
 public:
  static DynamicsSample pathwise(const PriorSpec& prior, const KernelSpec& kernel,
                                 std::uint64_t seed, int id = 0);
  static DynamicsSample random_features(const PriorSpec& prior, const KernelSpec& kernel,
                                        std::uint64_t seed, std::size_t n_features = 256,
                                        int id = 0);
  static DynamicsSample posterior_features(std::shared_ptr<const GpPosterior> gp,
                                           std::uint64_t seed, std::size_t n_features = 256,
                                           int id = 0);

  // Truncated value at z.
  Vec eval(const Vec& z);

  // Untruncated values at many points (rows). Feature kinds only.
  Mat raw_batch(const Mat& queries) const;

  // Appends a truncation layer and re-clips cached values.
  void truncate(std::shared_ptr<const GpPosterior> gp, double beta);

  SampleKind kind() const { return kind_; }
  int id() const { return id_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t input_dim() const { return kernel_.input_dim(); }
  std::size_t output_dim() const { return prior_.mean.output_dim(); }
  const std::vector<TruncationLayer>& layers() const { return layers_; }

  std::size_t cache_size() const { return static_cast<std::size_t>(cache_z_.rows()); }
  const Mat& cached_inputs() const { return cache_z_; }
  const Mat& cached_raw() const { return cache_raw_; }
  const Mat& cached_values() const { return cache_val_; }

 private:
  DynamicsSample() = default;

  Vec draw_pathwise(const Vec& z);
  void refactor_cache();
  Mat feature_matrix(const Mat& queries) const;

  SampleKind kind_ = SampleKind::Pathwise;
  int id_ = 0;
  std::uint64_t seed_ = 0;
  PriorSpec prior_;
  KernelSpec kernel_;
  std::vector<TruncationLayer> layers_;

  // Pathwise conditioning cache.
  Mat cache_z_;
  Mat cache_raw_;
  Mat cache_val_;
  Mat cache_chol_;
  Mat cache_white_;
  double cache_jitter_ = 0.0;
  std::unordered_map<std::string, std::size_t> cache_index_;

  // Random features.
  Mat freq_;      // F x D
  Vec phase_;     // F
  double feature_scale_ = 0.0;
  Mat weights_;   // F x output_dim
  bool linear_features_ = false;

  // Data update for posterior features.
  std::shared_ptr<const GpPosterior> post_;
  Mat update_;    // N x output_dim
};

// Predictions of several posteriors at the same queries. Posteriors of one
// lineage share a single triangular solve.
std::vector<Prediction> predict_many(const std::vector<const GpPosterior*>& posts,
                                     const Mat& queries);

// Sequential clip of `values` (rows match `queries`) through `layers`, given
// each layer's prediction at the queries.
void apply_layers(const std::vector<TruncationLayer>& layers,
                  const std::vector<Prediction>& predictions, Mat& values);
void apply_layers(const std::vector<TruncationLayer>& layers, const Mat& queries, Mat& values);

// Free-function surface.
DynamicsSample draw_prior_sample(const PriorSpec& prior, const KernelSpec& kernel,
                                 std::uint64_t seed);
Vec eval_sample(DynamicsSample& sample, const Vec& z);
DynamicsSample truncate_sample(DynamicsSample sample, std::shared_ptr<const GpPosterior> gp,
                               double beta);

// ---------------------------------------------------------------------------
// Scalar schedules
// ---------------------------------------------------------------------------

struct BudgetInputs {
  double delta = 0.1;
  double zeta = 0.1;
  double rkhs_bound = 1.0;
  int d_x = 1;
  double small_ball_exponent = 0.0;  // phi(zeta)
};

struct SampleBudget {
  std::int64_t m = 1;
  bool capped = false;
  double log_m = 0.0;  // natural log of the uncapped requirement
};

// Smallest M with M >= log(delta) / log(1 - exp(-d_x (B^2 / 2 + phi))).
SampleBudget sample_budget(const BudgetInputs& in, std::int64_t cap = 1'000'000'000);

// Exponent d_x (B^2 / 2 + phi) supplied directly.
SampleBudget sample_budget_from_exponent(double delta, double exponent,
                                         std::int64_t cap = 1'000'000'000);

struct SmallBallConfig {
  std::size_t n_draws = 4000;
  std::size_t n_grid = 64;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
  std::uint64_t seed = 7;
  Mat grid;  // optional explicit grid (rows); overrides n_grid/lo/hi
};

// Monte-Carlo small-ball estimate on a fixed grid with add-one smoothing.
// Stores the per-draw grid sup-norms so several radii share one draw set.
class SmallBallEstimator {
 public:
  SmallBallEstimator(const KernelSpec& kernel, const SmallBallConfig& config);
  double exponent(double zeta) const;
  const Mat& grid() const { return grid_; }
  const std::vector<double>& sup_norms() const { return sup_norms_; }

 private:
  Mat grid_;
  std::vector<double> sup_norms_;  // sorted ascending
};

double small_ball_exponent(const KernelSpec& kernel, double zeta,
                           const SmallBallConfig& config = {});

// Halton points in [lo, hi]^dim.
Mat halton_grid(std::size_t n, std::size_t dim, double lo, double hi);

// Delta_zeta = zeta sqrt(d_x) T^2 C_max / sigma_w
double tightening_delta(double zeta, int d_x, int horizon, double c_max, double sigma_w);

// d_sigma = eps sigma_w / (2 G_max T beta_n)
double exploration_threshold(double eps, double sigma_w, double g_max, int horizon,
                             double beta_n);

}  // namespace sbsrl
