#include "sbsrl/sampler.hpp"

#include "sbsrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>

namespace sbsrl {

namespace {

std::string key_of(const Vec& z) {
  std::string k(static_cast<std::size_t>(z.size()) * sizeof(double), '\0');
  std::memcpy(k.data(), z.data(), k.size());
  return k;
}

Mat standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

}  // namespace

std::string_view to_string(SampleKind kind) {
  switch (kind) {
    case SampleKind::Pathwise:
      return "pathwise";
    case SampleKind::RandomFeatures:
      return "rff";
    case SampleKind::PosteriorFeatures:
      return "posterior-rff";
  }
  return "?";
}

SampleKind parse_sample_kind(std::string_view name) {
  if (name == "pathwise") return SampleKind::Pathwise;
  if (name == "rff" || name == "random-features") return SampleKind::RandomFeatures;
  if (name == "posterior-rff") return SampleKind::PosteriorFeatures;
  throw InputError("unknown sample kind '" + std::string(name) + "'");
}

DynamicsSample DynamicsSample::pathwise(const PriorSpec& prior, const KernelSpec& kernel,
                                        std::uint64_t seed, int id) {
  prior.validate();
  kernel.validate();
  DynamicsSample s;
  s.kind_ = SampleKind::Pathwise;
  s.id_ = id;
  s.seed_ = seed;
  s.prior_ = prior;
  s.kernel_ = kernel;
  const auto in = static_cast<Eigen::Index>(kernel.input_dim());
  const auto out = static_cast<Eigen::Index>(prior.mean.output_dim());
  s.cache_z_ = Mat(0, in);
  s.cache_raw_ = Mat(0, out);
  s.cache_val_ = Mat(0, out);
  s.cache_chol_ = Mat(0, 0);
  s.cache_white_ = Mat(0, out);
  return s;
}

DynamicsSample DynamicsSample::random_features(const PriorSpec& prior, const KernelSpec& kernel,
                                               std::uint64_t seed, std::size_t n_features,
                                               int id) {
  prior.validate();
  kernel.validate();
  if (n_features == 0) throw InputError("random_features: need at least one feature");
  DynamicsSample s;
  s.kind_ = SampleKind::RandomFeatures;
  s.id_ = id;
  s.seed_ = seed;
  s.prior_ = prior;
  s.kernel_ = kernel;
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(kernel.input_dim());
  const auto out = static_cast<Eigen::Index>(prior.mean.output_dim());
  if (kernel.kind == KernelKind::Linear) {
    s.linear_features_ = true;
    s.freq_ = Mat::Identity(d, d) * kernel.lengthscales.cwiseInverse().asDiagonal();
    s.phase_ = Vec::Zero(d);
    s.feature_scale_ = std::sqrt(kernel.signal_variance);
    s.weights_ = standard_normal_matrix(d, out, rng);
    return s;
  }
  const auto f = static_cast<Eigen::Index>(n_features);
  s.freq_ = standard_normal_matrix(f, d, rng) * kernel.lengthscales.cwiseInverse().asDiagonal();
  if (kernel.kind == KernelKind::Matern52) {
    // Student-t spectral density with 2 nu = 5 degrees of freedom.
    std::chi_squared_distribution<double> chi(5.0);
    for (Eigen::Index i = 0; i < f; ++i) s.freq_.row(i) *= std::sqrt(5.0 / chi(rng));
  }
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  s.phase_.resize(f);
  for (Eigen::Index i = 0; i < f; ++i) s.phase_(i) = u(rng);
  s.feature_scale_ = std::sqrt(2.0 * kernel.signal_variance / static_cast<double>(f));
  s.weights_ = standard_normal_matrix(f, out, rng);
  return s;
}

DynamicsSample DynamicsSample::posterior_features(std::shared_ptr<const GpPosterior> gp,
                                                  std::uint64_t seed, std::size_t n_features,
                                                  int id) {
  if (!gp) throw InputError("posterior_features: null posterior");
  DynamicsSample s = random_features(gp->prior(), gp->kernel(), seed, n_features, id);
  s.kind_ = SampleKind::PosteriorFeatures;
  if (gp->size() > 0) {
    Rng rng(splitmix64(seed ^ 0x5eed5eedULL));
    const Mat eps = standard_normal_matrix(static_cast<Eigen::Index>(gp->size()),
                                           static_cast<Eigen::Index>(s.output_dim()), rng) *
                    gp->prior().noise_std;
    const Mat prior_at_data = s.raw_batch(gp->inputs());
    const Mat resid = gp->targets() - prior_at_data - eps;
    const auto l = gp->chol().triangularView<Eigen::Lower>();
    s.update_ = l.transpose().solve(l.solve(resid));
  }
  s.post_ = std::move(gp);
  return s;
}

Mat DynamicsSample::feature_matrix(const Mat& queries) const {
  if (linear_features_) return feature_scale_ * (queries * freq_.transpose());
  Mat arg = queries * freq_.transpose();
  arg.rowwise() += phase_.transpose();
  return feature_scale_ * arg.array().cos().matrix();
}

Mat DynamicsSample::raw_batch(const Mat& queries) const {
  if (kind_ == SampleKind::Pathwise) {
    throw InputError("raw_batch: pathwise samples are evaluated point by point");
  }
  if (queries.rows() > 0 && queries.cols() != static_cast<Eigen::Index>(input_dim())) {
    throw InputError("sample: query dimension mismatch");
  }
  Mat out = prior_.mean.evaluate(queries);
  out.noalias() += feature_matrix(queries) * weights_;
  if (kind_ == SampleKind::PosteriorFeatures && post_ && post_->size() > 0) {
    out.noalias() += kernel_matrix(kernel_, queries, post_->inputs()) * update_;
  }
  return out;
}

void DynamicsSample::refactor_cache() {
  const Eigen::Index n = cache_z_.rows();
  Mat gram = kernel_matrix(kernel_, cache_z_, cache_z_);
  const double base = std::max(cache_jitter_ * 10.0, 1e-10 * gram.trace() / static_cast<double>(n));
  Eigen::LLT<Mat> llt;
  for (double j = base;; j *= 10.0) {
    Mat a = gram;
    a.diagonal().array() += j;
    llt.compute(a);
    if (llt.info() == Eigen::Success) {
      cache_jitter_ = j;
      break;
    }
    if (j >= 1e-4 * std::max(1.0, gram.diagonal().maxCoeff())) {
      throw NumericalError("pathwise sample: conditioning cache Gram is singular");
    }
  }
  cache_chol_ = llt.matrixL();
  cache_white_ = cache_chol_.triangularView<Eigen::Lower>().solve(
      cache_raw_ - prior_.mean.evaluate(cache_z_));
}

Vec DynamicsSample::draw_pathwise(const Vec& z) {
  const Eigen::Index n = cache_z_.rows();
  const double kzz = kernel_diag(kernel_, z);
  Vec mean = prior_.mean(z);
  double var = kzz;
  Vec v;
  if (n > 0) {
    const Vec kc = kernel_matrix(kernel_, cache_z_, z.transpose()).col(0);
    v = cache_chol_.triangularView<Eigen::Lower>().solve(kc);
    mean.noalias() += cache_white_.transpose() * v;
    var -= v.squaredNorm();
  }
  Rng rng(derive_seed(seed_, "pathwise", static_cast<std::uint64_t>(n)));
  const double sd = std::sqrt(std::max(var, 0.0));
  Vec raw(mean.size());
  for (Eigen::Index j = 0; j < raw.size(); ++j) raw(j) = mean(j) + sd * standard_normal(rng);

  // Append to the cache factor; escalate jitter if the new pivot vanishes.
  if (n == 0) cache_jitter_ = 1e-10 * std::max(kzz, std::numeric_limits<double>::min());
  const double pivot_sq = kzz + cache_jitter_ - (n > 0 ? v.squaredNorm() : 0.0);
  cache_z_.conservativeResize(n + 1, Eigen::NoChange);
  cache_z_.row(n) = z.transpose();
  cache_raw_.conservativeResize(n + 1, Eigen::NoChange);
  cache_raw_.row(n) = raw.transpose();
  if (pivot_sq > 0.0) {
    const double pivot = std::sqrt(pivot_sq);
    Mat chol = Mat::Zero(n + 1, n + 1);
    if (n > 0) {
      chol.topLeftCorner(n, n) = cache_chol_;
      chol.block(n, 0, 1, n) = v.transpose();
    }
    chol(n, n) = pivot;
    cache_chol_ = std::move(chol);
    const Vec prior_z = prior_.mean(z);
    Vec white_row = raw - prior_z;
    if (n > 0) white_row -= cache_white_.transpose() * v;
    cache_white_.conservativeResize(n + 1, Eigen::NoChange);
    cache_white_.row(n) = (white_row / pivot).transpose();
  } else {
    refactor_cache();
  }
  return raw;
}

Vec DynamicsSample::eval(const Vec& z) {
  if (z.size() != static_cast<Eigen::Index>(input_dim())) {
    throw InputError("sample: query dimension mismatch");
  }
  if (kind_ != SampleKind::Pathwise) {
    Mat values = raw_batch(z.transpose());
    apply_layers(layers_, z.transpose(), values);
    return values.row(0).transpose();
  }
  const std::string key = key_of(z);
  if (auto it = cache_index_.find(key); it != cache_index_.end()) {
    return cache_val_.row(static_cast<Eigen::Index>(it->second)).transpose();
  }
  const Vec raw = draw_pathwise(z);
  Mat value = raw.transpose();
  apply_layers(layers_, z.transpose(), value);
  const Eigen::Index n = cache_val_.rows();
  cache_val_.conservativeResize(n + 1, Eigen::NoChange);
  cache_val_.row(n) = value.row(0);
  cache_index_.emplace(key, static_cast<std::size_t>(n));
  return value.row(0).transpose();
}

void DynamicsSample::truncate(std::shared_ptr<const GpPosterior> gp, double beta) {
  if (!gp) throw InputError("truncate: null posterior");
  if (!(beta >= 0.0)) throw InputError("truncate: beta must be nonnegative");
  if (gp->input_dim() != input_dim() || gp->output_dim() != output_dim()) {
    throw InputError("truncate: posterior dimensions do not match the sample");
  }
  TruncationLayer layer{std::move(gp), beta};
  if (cache_val_.rows() > 0) {
    const std::vector<TruncationLayer> one{layer};
    apply_layers(one, cache_z_, cache_val_);
  }
  layers_.push_back(std::move(layer));
}

std::vector<Prediction> predict_many(const std::vector<const GpPosterior*>& posts,
                                     const Mat& queries) {
  std::vector<Prediction> out(posts.size());
  // Group by lineage; the largest member of each group serves every prefix.
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < posts.size(); ++i) groups[posts[i]->lineage()].push_back(i);
  for (auto& [lineage, members] : groups) {
    std::size_t host = members.front();
    for (std::size_t i : members) {
      if (posts[i]->size() > posts[host]->size()) host = i;
    }
    bool shared = true;
    for (std::size_t i : members) shared = shared && posts[i]->is_prefix_of(*posts[host]);
    if (!shared) {
      for (std::size_t i : members) out[i] = posts[i]->predict(queries);
      continue;
    }
    std::vector<std::size_t> sizes;
    sizes.reserve(members.size());
    for (std::size_t i : members) sizes.push_back(posts[i]->size());
    auto preds = posts[host]->predict_prefixes(queries, sizes);
    for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = std::move(preds[k]);
  }
  return out;
}

void apply_layers(const std::vector<TruncationLayer>& layers,
                  const std::vector<Prediction>& predictions, Mat& values) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Prediction& p = predictions[l];
    const double b = layers[l].beta;
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        const double half = b * p.stddev(i);
        values(i, j) = std::clamp(values(i, j), p.mean(i, j) - half, p.mean(i, j) + half);
      }
    }
  }
}

void apply_layers(const std::vector<TruncationLayer>& layers, const Mat& queries, Mat& values) {
  if (layers.empty()) return;
  std::vector<const GpPosterior*> posts;
  posts.reserve(layers.size());
  for (const auto& l : layers) posts.push_back(l.gp.get());
  apply_layers(layers, predict_many(posts, queries), values);
}

DynamicsSample draw_prior_sample(const PriorSpec& prior, const KernelSpec& kernel,
                                 std::uint64_t seed) {
  return DynamicsSample::pathwise(prior, kernel, seed);
}

Vec eval_sample(DynamicsSample& sample, const Vec& z) { return sample.eval(z); }

DynamicsSample truncate_sample(DynamicsSample sample, std::shared_ptr<const GpPosterior> gp,
                               double beta) {
  sample.truncate(std::move(gp), beta);
  return sample;
}

// ---------------------------------------------------------------------------

SampleBudget sample_budget_from_exponent(double delta, double exponent, std::int64_t cap) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("sample_budget: delta must lie in (0, 1]");
  if (!(exponent > 0.0) || !std::isfinite(exponent)) {
    throw InputError("sample_budget: exponent d_x (B^2/2 + phi) must be positive and finite");
  }
  if (cap < 1) throw InputError("sample_budget: cap must be >= 1");
  SampleBudget out;
  const double log_delta = std::log(delta);
  if (log_delta == 0.0) {
    out.m = 1;
    out.log_m = 0.0;
    return out;
  }
  // log(1 - exp(-a)) = log1p(-exp(-a)); for large a it underflows to -exp(-a),
  // so fall back to log-space: log M ~= log(-log delta) + a.
  const double p = std::exp(-exponent);
  double log_m;
  double ratio = std::numeric_limits<double>::infinity();
  if (p > 0.0) {
    const double denom = std::log1p(-p);
    ratio = log_delta / denom;
    log_m = std::log(ratio);
  } else {
    log_m = std::log(-log_delta) + exponent;
  }
  out.log_m = log_m;
  if (!std::isfinite(ratio) || log_m > std::log(static_cast<double>(cap))) {
    out.m = cap;
    out.capped = true;
    return out;
  }
  // Guard against ceil() of ratios that are integral up to rounding.
  const double m = std::ceil(ratio * (1.0 - 1e-12));
  out.m = std::max<std::int64_t>(1, static_cast<std::int64_t>(m));
  return out;
}

SampleBudget sample_budget(const BudgetInputs& in, std::int64_t cap) {
  if (!(in.zeta > 0.0)) throw InputError("sample_budget: zeta must be positive");
  if (!(in.rkhs_bound > 0.0)) throw InputError("sample_budget: B must be positive");
  if (in.d_x < 1) throw InputError("sample_budget: d_x must be >= 1");
  if (in.small_ball_exponent < 0.0) {
    throw InputError("sample_budget: small-ball exponent must be nonnegative");
  }
  const double exponent =
      in.d_x * (0.5 * in.rkhs_bound * in.rkhs_bound + in.small_ball_exponent);
  return sample_budget_from_exponent(in.delta, exponent, cap);
}

Mat halton_grid(std::size_t n, std::size_t dim, double lo, double hi) {
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  if (dim > std::size(kPrimes)) throw InputError("halton_grid: dimension too large");
  Mat g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const int base = kPrimes[d];
      double f = 1.0, r = 0.0;
      for (std::size_t k = i + 1; k > 0; k /= static_cast<std::size_t>(base)) {
        f /= base;
        r += f * static_cast<double>(k % static_cast<std::size_t>(base));
      }
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = lo + (hi - lo) * r;
    }
  }
  return g;
}

SmallBallEstimator::SmallBallEstimator(const KernelSpec& kernel, const SmallBallConfig& config) {
  kernel.validate();
  if (config.n_draws == 0) throw InputError("small_ball: need at least one draw");
  grid_ = config.grid.rows() > 0
              ? config.grid
              : halton_grid(config.n_grid, kernel.input_dim(), config.grid_lo, config.grid_hi);
  const Mat gram = kernel_matrix(kernel, grid_, grid_);
  Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
  const Mat root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Rng rng(config.seed);
  const auto n = static_cast<Eigen::Index>(config.n_draws);
  const Mat draws = root * standard_normal_matrix(grid_.rows(), n, rng);
  sup_norms_.resize(config.n_draws);
  for (Eigen::Index i = 0; i < n; ++i) {
    sup_norms_[static_cast<std::size_t>(i)] = draws.col(i).cwiseAbs().maxCoeff();
  }
  std::sort(sup_norms_.begin(), sup_norms_.end());
}

double SmallBallEstimator::exponent(double zeta) const {
  if (!(zeta > 0.0)) throw InputError("small_ball: zeta must be positive");
  const auto inside = static_cast<double>(
      std::lower_bound(sup_norms_.begin(), sup_norms_.end(), zeta) - sup_norms_.begin());
  const auto total = static_cast<double>(sup_norms_.size());
  return -std::log((inside + 1.0) / (total + 1.0));
}

double small_ball_exponent(const KernelSpec& kernel, double zeta, const SmallBallConfig& config) {
  return SmallBallEstimator(kernel, config).exponent(zeta);
}

double tightening_delta(double zeta, int d_x, int horizon, double c_max, double sigma_w) {
  if (sigma_w == 0.0) throw InputError("tightening_delta: sigma_w must be nonzero");
  if (zeta < 0.0 || d_x < 1 || horizon < 0 || c_max < 0.0 || sigma_w < 0.0) {
    throw InputError("tightening_delta: arguments out of range");
  }
  const double t = static_cast<double>(horizon);
  return zeta * std::sqrt(static_cast<double>(d_x)) * t * t * c_max / sigma_w;
}

double exploration_threshold(double eps, double sigma_w, double g_max, int horizon,
                             double beta_n) {
  if (g_max == 0.0 || horizon == 0 || beta_n == 0.0) {
    throw InputError("exploration_threshold: zero factor in the denominator");
  }
  if (eps < 0.0 || sigma_w < 0.0 || g_max < 0.0 || horizon < 0 || beta_n < 0.0) {
    throw InputError("exploration_threshold: arguments out of range");
  }
  return eps * sigma_w / (2.0 * g_max * static_cast<double>(horizon) * beta_n);
}

}  // namespace sbsrl
