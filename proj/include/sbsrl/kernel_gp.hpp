#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sbsrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

enum class KernelKind { SquaredExponential, Linear, Matern52 };

std::string_view to_string(KernelKind kind);
KernelKind parse_kernel_kind(std::string_view name);

struct KernelSpec {
  KernelKind kind = KernelKind::SquaredExponential;
  Vec lengthscales;  // one per input dimension, > 0
  double signal_variance = 1.0;

  std::size_t input_dim() const { return static_cast<std::size_t>(lengthscales.size()); }
  bool stationary() const { return kind != KernelKind::Linear; }
  void validate() const;

  static KernelSpec squared_exponential(Vec lengthscales, double variance);
  static KernelSpec isotropic(KernelKind kind, std::size_t dim, double lengthscale,
                              double variance);
};

double kernel_eval(const KernelSpec& spec, const Vec& z, const Vec& zp);
double kernel_diag(const KernelSpec& spec, const Vec& z);

// Points are rows. Returns A.rows() x B.rows().
Mat kernel_matrix(const KernelSpec& spec, const Mat& a, const Mat& b);
Vec kernel_diag(const KernelSpec& spec, const Mat& a);

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

class MeanFunction {
 public:
  enum class Kind { Zero, Affine, Tabulated, Custom };

  MeanFunction() = default;

  static MeanFunction zero(std::size_t output_dim);
  // mu(z) = A z + b, A is output_dim x input_dim.
  static MeanFunction affine(Mat a, Vec b);
  // Nearest-neighbour lookup in a table of (point, value) rows.
  static MeanFunction tabulated(Mat points, Mat values);
  static MeanFunction custom(std::size_t output_dim, std::function<Vec(const Vec&)> fn,
                             std::string name);

  Vec operator()(const Vec& z) const;
  // Rows in, rows out: N x output_dim.
  Mat evaluate(const Mat& z) const;

  Kind kind() const { return kind_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::string& name() const { return name_; }

 private:
  Kind kind_ = Kind::Zero;
  std::size_t output_dim_ = 0;
  Mat a_;
  Vec b_;
  Mat table_points_;
  Mat table_values_;
  std::function<Vec(const Vec&)> fn_;
  std::string name_ = "zero";
};

struct PriorSpec {
  MeanFunction mean;
  double rkhs_bound = 1.0;  // B
  double noise_std = 0.1;   // sigma_w
  void validate() const;
};

// ---------------------------------------------------------------------------
// Exact multi-output GP with a kernel shared across outputs.
// ---------------------------------------------------------------------------

struct Prediction {
  Mat mean;    // B x output_dim
  Vec stddev;  // B, identical for every output
};

class GpPosterior {
 public:
  // The prior itself (no data).
  GpPosterior(PriorSpec prior, KernelSpec kernel);

  // Dense exact fit. Rows of z are inputs, rows of y are targets.
  static GpPosterior fit(PriorSpec prior, KernelSpec kernel, const Mat& z, const Mat& y,
                         int n_episodes = 0);

  // Appends rows via a blocked Cholesky update. The result shares this
  // posterior's lineage, so any earlier snapshot is an exact prefix of it.
  GpPosterior extended(const Mat& z, const Mat& y, int n_episodes) const;

  Vec mean(const Vec& z) const;
  Vec stddev(const Vec& z) const;
  double uncertainty(const Vec& z) const;  // s_n(z) = ||stddev(z)||
  Prediction predict(const Mat& queries) const;

  // Predictions of the posteriors built from the first `sizes[i]` data rows,
  // all from one triangular solve.
  std::vector<Prediction> predict_prefixes(const Mat& queries,
                                           std::span<const std::size_t> sizes) const;

  // 1/2 log det(I + K / sigma_w^2) of the stored inputs.
  double information_gain() const;

  // Posterior covariance among a candidate set (rows).
  Mat covariance(const Mat& candidates) const;

  bool is_prefix_of(const GpPosterior& other) const;

  const PriorSpec& prior() const { return state_->prior; }
  const KernelSpec& kernel() const { return state_->kernel; }
  const Mat& inputs() const { return state_->z; }
  const Mat& targets() const { return state_->y; }
  const Mat& chol() const { return state_->chol; }
  const Mat& alpha() const { return state_->alpha; }
  double jitter() const { return state_->jitter; }
  std::size_t size() const { return static_cast<std::size_t>(state_->z.rows()); }
  std::size_t input_dim() const { return state_->kernel.input_dim(); }
  std::size_t output_dim() const { return state_->prior.mean.output_dim(); }
  int n_episodes() const { return state_->n_episodes; }
  std::uint64_t lineage() const { return state_->lineage; }
  std::size_t negative_variance_clamps() const { return clamps_->load(); }

 private:
  struct State {
    PriorSpec prior;
    KernelSpec kernel;
    Mat z;
    Mat y;
    Mat chol;      // lower factor of K + (sigma_w^2 + jitter) I
    Mat whitened;  // chol^{-1} (y - mu(z))
    Mat alpha;     // (K + sigma_w^2 I)^{-1} (y - mu(z))
    double jitter = 0.0;
    int n_episodes = 0;
    std::uint64_t lineage = 0;
  };

  explicit GpPosterior(std::shared_ptr<const State> state);
  static GpPosterior factorize(PriorSpec prior, KernelSpec kernel, const Mat& z, const Mat& y,
                               int n_episodes, std::uint64_t lineage);
  double clamp_variance(double v) const;

  std::shared_ptr<const State> state_;
  std::shared_ptr<std::atomic<std::size_t>> clamps_;
};

// Fresh lineage id for independent fits.
std::uint64_t next_lineage_id();

// ---------------------------------------------------------------------------
// Free-function surface
// ---------------------------------------------------------------------------

GpPosterior gp_fit(const PriorSpec& prior, const KernelSpec& kernel, const Mat& z, const Mat& y,
                   int n_episodes = 0);
Vec posterior_mean(const GpPosterior& gp, const Vec& z);
Vec posterior_std(const GpPosterior& gp, const Vec& z);
double uncertainty_s(const GpPosterior& gp, const Vec& z);

// beta_n(delta) = B + sigma_w sqrt(2 (gamma + 1 + ln(d_x / delta)))
double beta(int n_episodes, int horizon, const PriorSpec& prior, double delta, double gamma,
            int d_x);

// 1/2 log det(I + sigma_w^-2 K_points)
double info_gain(const KernelSpec& kernel, const Mat& points, double sigma_w);

// Greedy surrogate for the maximum information gain over subsets of size n.
double max_info_gain_greedy(const KernelSpec& kernel, const Mat& candidates, int n,
                            double sigma_w);

// Greedy variance-maximizing selection of k rows from a covariance matrix
// under noisy observations. Returns selected indices and the summed gain.
struct GreedySelection {
  std::vector<std::size_t> indices;
  double gain = 0.0;
};
GreedySelection greedy_select(const Mat& covariance, double sigma_w, std::size_t k);

}  // namespace sbsrl
