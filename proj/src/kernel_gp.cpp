#include "sbsrl/kernel_gp.hpp"

#include "sbsrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace sbsrl {

namespace {

constexpr double kSqrt5 = 2.2360679774997896964;

void check_dims(const KernelSpec& spec, Eigen::Index dim, const char* what) {
  if (dim != static_cast<Eigen::Index>(spec.input_dim())) {
    std::ostringstream os;
    os << what << ": input dimension " << dim << " does not match kernel dimension "
       << spec.input_dim();
    throw InputError(os.str());
  }
}

Mat scaled_rows(const KernelSpec& spec, const Mat& a) {
  return a * spec.lengthscales.cwiseInverse().asDiagonal();
}

double stationary_profile(KernelKind kind, double variance, double sqdist) {
  switch (kind) {
    case KernelKind::SquaredExponential:
      return variance * std::exp(-0.5 * sqdist);
    case KernelKind::Matern52: {
      const double r = std::sqrt(std::max(sqdist, 0.0));
      return variance * (1.0 + kSqrt5 * r + 5.0 * sqdist / 3.0) * std::exp(-kSqrt5 * r);
    }
    case KernelKind::Linear:
      break;
  }
  return 0.0;
}

std::atomic<std::uint64_t> g_lineage{1};

}  // namespace

std::uint64_t next_lineage_id() { return g_lineage.fetch_add(1); }

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::SquaredExponential:
      return "se";
    case KernelKind::Linear:
      return "linear";
    case KernelKind::Matern52:
      return "matern52";
  }
  return "?";
}

KernelKind parse_kernel_kind(std::string_view name) {
  if (name == "se" || name == "squared-exponential" || name == "rbf") {
    return KernelKind::SquaredExponential;
  }
  if (name == "linear") return KernelKind::Linear;
  if (name == "matern52" || name == "matern-5/2") return KernelKind::Matern52;
  throw InputError("unknown kernel kind '" + std::string(name) + "'");
}

void KernelSpec::validate() const {
  if (lengthscales.size() == 0) throw InputError("kernel: lengthscales must be nonempty");
  if ((lengthscales.array() <= 0.0).any() || !lengthscales.allFinite()) {
    throw InputError("kernel: lengthscales must be positive and finite");
  }
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
    throw InputError("kernel: signal variance must be positive");
  }
}

KernelSpec KernelSpec::squared_exponential(Vec lengthscales, double variance) {
  KernelSpec k;
  k.kind = KernelKind::SquaredExponential;
  k.lengthscales = std::move(lengthscales);
  k.signal_variance = variance;
  return k;
}

KernelSpec KernelSpec::isotropic(KernelKind kind, std::size_t dim, double lengthscale,
                                 double variance) {
  KernelSpec k;
  k.kind = kind;
  k.lengthscales = Vec::Constant(static_cast<Eigen::Index>(dim), lengthscale);
  k.signal_variance = variance;
  return k;
}

double kernel_eval(const KernelSpec& spec, const Vec& z, const Vec& zp) {
  check_dims(spec, z.size(), "kernel_eval");
  check_dims(spec, zp.size(), "kernel_eval");
  const Vec inv = spec.lengthscales.cwiseInverse();
  if (spec.kind == KernelKind::Linear) {
    return spec.signal_variance * (z.cwiseProduct(inv)).dot(zp.cwiseProduct(inv));
  }
  const double sq = (z - zp).cwiseProduct(inv).squaredNorm();
  return stationary_profile(spec.kind, spec.signal_variance, sq);
}

double kernel_diag(const KernelSpec& spec, const Vec& z) {
  check_dims(spec, z.size(), "kernel_diag");
  if (spec.kind == KernelKind::Linear) {
    return spec.signal_variance * z.cwiseQuotient(spec.lengthscales).squaredNorm();
  }
  return spec.signal_variance;
}

Mat kernel_matrix(const KernelSpec& spec, const Mat& a, const Mat& b) {
  if (a.rows() > 0) check_dims(spec, a.cols(), "kernel_matrix");
  if (b.rows() > 0) check_dims(spec, b.cols(), "kernel_matrix");
  if (a.rows() == 0 || b.rows() == 0) return Mat(a.rows(), b.rows());
  const Mat as = scaled_rows(spec, a);
  const Mat bs = scaled_rows(spec, b);
  Mat cross = as * bs.transpose();
  if (spec.kind == KernelKind::Linear) return spec.signal_variance * cross;

  const Vec an = as.rowwise().squaredNorm();
  const Vec bn = bs.rowwise().squaredNorm();
  for (Eigen::Index j = 0; j < cross.cols(); ++j) {
    for (Eigen::Index i = 0; i < cross.rows(); ++i) {
      const double sq = std::max(an(i) + bn(j) - 2.0 * cross(i, j), 0.0);
      cross(i, j) = stationary_profile(spec.kind, spec.signal_variance, sq);
    }
  }
  return cross;
}

Vec kernel_diag(const KernelSpec& spec, const Mat& a) {
  if (a.rows() > 0) check_dims(spec, a.cols(), "kernel_diag");
  if (spec.kind == KernelKind::Linear) {
    return spec.signal_variance * scaled_rows(spec, a).rowwise().squaredNorm();
  }
  return Vec::Constant(a.rows(), spec.signal_variance);
}

// ---------------------------------------------------------------------------

MeanFunction MeanFunction::zero(std::size_t output_dim) {
  MeanFunction m;
  m.kind_ = Kind::Zero;
  m.output_dim_ = output_dim;
  m.name_ = "zero";
  return m;
}

MeanFunction MeanFunction::affine(Mat a, Vec b) {
  if (a.rows() != b.size()) throw InputError("affine mean: A rows must match b length");
  MeanFunction m;
  m.kind_ = Kind::Affine;
  m.output_dim_ = static_cast<std::size_t>(b.size());
  m.a_ = std::move(a);
  m.b_ = std::move(b);
  m.name_ = "affine";
  return m;
}

MeanFunction MeanFunction::tabulated(Mat points, Mat values) {
  if (points.rows() != values.rows() || points.rows() == 0) {
    throw InputError("tabulated mean: need matching, nonempty point and value tables");
  }
  MeanFunction m;
  m.kind_ = Kind::Tabulated;
  m.output_dim_ = static_cast<std::size_t>(values.cols());
  m.table_points_ = std::move(points);
  m.table_values_ = std::move(values);
  m.name_ = "tabulated";
  return m;
}

MeanFunction MeanFunction::custom(std::size_t output_dim, std::function<Vec(const Vec&)> fn,
                                  std::string name) {
  MeanFunction m;
  m.kind_ = Kind::Custom;
  m.output_dim_ = output_dim;
  m.fn_ = std::move(fn);
  m.name_ = std::move(name);
  return m;
}

Vec MeanFunction::operator()(const Vec& z) const {
  switch (kind_) {
    case Kind::Zero:
      return Vec::Zero(static_cast<Eigen::Index>(output_dim_));
    case Kind::Affine:
      if (z.size() != a_.cols()) throw InputError("affine mean: input dimension mismatch");
      return a_ * z + b_;
    case Kind::Tabulated: {
      if (z.size() != table_points_.cols()) {
        throw InputError("tabulated mean: input dimension mismatch");
      }
      Eigen::Index best = 0;
      (table_points_.rowwise() - z.transpose()).rowwise().squaredNorm().minCoeff(&best);
      return table_values_.row(best).transpose();
    }
    case Kind::Custom:
      return fn_(z);
  }
  return {};
}

Mat MeanFunction::evaluate(const Mat& z) const {
  const auto od = static_cast<Eigen::Index>(output_dim_);
  switch (kind_) {
    case Kind::Zero:
      return Mat::Zero(z.rows(), od);
    case Kind::Affine:
      if (z.rows() > 0 && z.cols() != a_.cols()) {
        throw InputError("affine mean: input dimension mismatch");
      }
      return (z * a_.transpose()).rowwise() + b_.transpose();
    default:
      break;
  }
  Mat out(z.rows(), od);
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.row(i) = (*this)(z.row(i).transpose());
  return out;
}

void PriorSpec::validate() const {
  if (!(rkhs_bound > 0.0)) throw InputError("prior: RKHS bound B must be positive");
  if (!(noise_std > 0.0)) throw InputError("prior: noise std must be positive");
  if (mean.output_dim() == 0) throw InputError("prior: mean function has no outputs");
}

// ---------------------------------------------------------------------------

GpPosterior::GpPosterior(std::shared_ptr<const State> state)
    : state_(std::move(state)), clamps_(std::make_shared<std::atomic<std::size_t>>(0)) {}

GpPosterior::GpPosterior(PriorSpec prior, KernelSpec kernel) {
  prior.validate();
  kernel.validate();
  auto s = std::make_shared<State>();
  const auto in = static_cast<Eigen::Index>(kernel.input_dim());
  const auto out = static_cast<Eigen::Index>(prior.mean.output_dim());
  s->z = Mat(0, in);
  s->y = Mat(0, out);
  s->chol = Mat(0, 0);
  s->whitened = Mat(0, out);
  s->alpha = Mat(0, out);
  s->prior = std::move(prior);
  s->kernel = std::move(kernel);
  s->lineage = next_lineage_id();
  state_ = std::move(s);
  clamps_ = std::make_shared<std::atomic<std::size_t>>(0);
}

GpPosterior GpPosterior::factorize(PriorSpec prior, KernelSpec kernel, const Mat& z,
                                   const Mat& y, int n_episodes, std::uint64_t lineage) {
  prior.validate();
  kernel.validate();
  const Eigen::Index n = z.rows();
  if (y.rows() != n) throw InputError("gp_fit: input and target row counts differ");
  if (n > 0) check_dims(kernel, z.cols(), "gp_fit");
  if (n > 0 && y.cols() != static_cast<Eigen::Index>(prior.mean.output_dim())) {
    throw InputError("gp_fit: target dimension does not match the prior mean");
  }
  if (!z.allFinite() || !y.allFinite()) throw InputError("gp_fit: non-finite data");
  if (n == 0) {
    GpPosterior empty(std::move(prior), std::move(kernel));
    auto s = std::make_shared<State>(*empty.state_);
    s->n_episodes = n_episodes;
    s->lineage = lineage;
    return GpPosterior(std::move(s));
  }

  const double noise_var = prior.noise_std * prior.noise_std;
  Mat gram = kernel_matrix(kernel, z, z);
  gram.diagonal().array() += noise_var;
  const double base = 1e-10 * gram.trace() / static_cast<double>(n);

  // Exact attempt first, then an escalating jitter schedule.
  Eigen::LLT<Mat> llt(gram);
  double jitter = 0.0;
  while (llt.info() != Eigen::Success) {
    jitter = jitter == 0.0 ? base : 10.0 * jitter;
    Mat a = gram;
    a.diagonal().array() += jitter;
    llt.compute(a);
    if (llt.info() == Eigen::Success) break;
    if (jitter >= 1e-4) {
      std::ostringstream os;
      os << "gp_fit: Gram matrix not positive definite; factorization failed at jitter "
         << jitter << " (schedule started at " << base << ")";
      throw NumericalError(os.str());
    }
  }

  auto s = std::make_shared<State>();
  s->chol = llt.matrixL();
  const Mat resid = y - prior.mean.evaluate(z);
  s->whitened = s->chol.triangularView<Eigen::Lower>().solve(resid);
  s->alpha = s->chol.transpose().triangularView<Eigen::Upper>().solve(s->whitened);
  s->z = z;
  s->y = y;
  s->jitter = jitter;
  s->n_episodes = n_episodes;
  s->lineage = lineage;
  s->prior = std::move(prior);
  s->kernel = std::move(kernel);
  return GpPosterior(std::move(s));
}

GpPosterior GpPosterior::fit(PriorSpec prior, KernelSpec kernel, const Mat& z, const Mat& y,
                             int n_episodes) {
  return factorize(std::move(prior), std::move(kernel), z, y, n_episodes, next_lineage_id());
}

GpPosterior GpPosterior::extended(const Mat& z, const Mat& y, int n_episodes) const {
  const State& old = *state_;
  if (z.rows() != y.rows()) throw InputError("extend: input and target row counts differ");
  if (z.rows() > 0) check_dims(old.kernel, z.cols(), "extend");
  if (z.rows() > 0 && y.cols() != old.y.cols()) {
    throw InputError("extend: target dimension mismatch");
  }
  if (!z.allFinite() || !y.allFinite()) throw InputError("extend: non-finite data");

  const Eigen::Index n0 = old.z.rows();
  const Eigen::Index k = z.rows();
  Mat z_all(n0 + k, old.z.cols() > 0 ? old.z.cols() : z.cols());
  Mat y_all(n0 + k, old.y.cols());
  if (n0 > 0) {
    z_all.topRows(n0) = old.z;
    y_all.topRows(n0) = old.y;
  }
  if (k > 0) {
    z_all.bottomRows(k) = z;
    y_all.bottomRows(k) = y;
  }
  if (n0 == 0) return factorize(old.prior, old.kernel, z_all, y_all, n_episodes, old.lineage);
  if (k == 0) {
    auto s = std::make_shared<State>(old);
    s->n_episodes = n_episodes;
    return GpPosterior(std::move(s));
  }

  const double noise_var = old.prior.noise_std * old.prior.noise_std;
  const auto l_old = old.chol.triangularView<Eigen::Lower>();
  const Mat k12 = kernel_matrix(old.kernel, old.z, z);
  Mat c = l_old.solve(k12);  // n0 x k, lower-left block transposed
  Mat schur = kernel_matrix(old.kernel, z, z) - c.transpose() * c;
  schur.diagonal().array() += noise_var + old.jitter;
  Eigen::LLT<Mat> llt(schur);
  if (llt.info() != Eigen::Success) {
    // Incremental update lost definiteness; a full refit escalates jitter.
    return fit(old.prior, old.kernel, z_all, y_all, n_episodes);
  }

  auto s = std::make_shared<State>();
  s->chol = Mat::Zero(n0 + k, n0 + k);
  s->chol.topLeftCorner(n0, n0) = old.chol;
  s->chol.bottomLeftCorner(k, n0) = c.transpose();
  s->chol.bottomRightCorner(k, k) = llt.matrixL();
  const Mat resid_new = y - old.prior.mean.evaluate(z);
  s->whitened = Mat(n0 + k, old.y.cols());
  s->whitened.topRows(n0) = old.whitened;
  s->whitened.bottomRows(k) = llt.matrixL().solve(resid_new - c.transpose() * old.whitened);
  s->alpha = s->chol.transpose().triangularView<Eigen::Upper>().solve(s->whitened);
  s->z = std::move(z_all);
  s->y = std::move(y_all);
  s->jitter = old.jitter;
  s->n_episodes = n_episodes;
  s->lineage = old.lineage;
  s->prior = old.prior;
  s->kernel = old.kernel;
  return GpPosterior(std::move(s));
}

double GpPosterior::clamp_variance(double v) const {
  if (v < 0.0) {
    clamps_->fetch_add(1);
    return 0.0;
  }
  return v;
}

Prediction GpPosterior::predict(const Mat& queries) const {
  const std::size_t sizes[] = {size()};
  return std::move(predict_prefixes(queries, sizes).front());
}

std::vector<Prediction> GpPosterior::predict_prefixes(const Mat& queries,
                                                      std::span<const std::size_t> sizes) const {
  const State& s = *state_;
  if (queries.rows() > 0) check_dims(s.kernel, queries.cols(), "predict");
  const Eigen::Index b = queries.rows();
  const Mat prior_mean = s.prior.mean.evaluate(queries);
  const Vec prior_var = kernel_diag(s.kernel, queries);

  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return sizes[i] < sizes[j]; });
  for (std::size_t sz : sizes) {
    if (sz > size()) throw InputError("predict_prefixes: prefix longer than the dataset");
  }

  std::vector<Prediction> out(sizes.size());
  const std::size_t max_size = sizes.empty() ? 0 : sizes[order.back()];
  Mat v;
  if (max_size > 0) {
    const auto m = static_cast<Eigen::Index>(max_size);
    const Mat kq = kernel_matrix(s.kernel, s.z.topRows(m), queries);
    v = s.chol.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(kq);
  }

  Mat mean_acc = prior_mean;
  Vec var_acc = prior_var;
  Eigen::Index done = 0;
  for (std::size_t idx : order) {
    const auto upto = static_cast<Eigen::Index>(sizes[idx]);
    if (upto > done) {
      const auto seg = v.middleRows(done, upto - done);
      mean_acc.noalias() += seg.transpose() * s.whitened.middleRows(done, upto - done);
      var_acc -= seg.colwise().squaredNorm().transpose();
      done = upto;
    }
    Prediction p;
    p.mean = mean_acc;
    p.stddev.resize(b);
    for (Eigen::Index i = 0; i < b; ++i) p.stddev(i) = std::sqrt(clamp_variance(var_acc(i)));
    out[idx] = std::move(p);
  }
  return out;
}

Vec GpPosterior::mean(const Vec& z) const {
  return predict(z.transpose()).mean.row(0).transpose();
}

Vec GpPosterior::stddev(const Vec& z) const {
  const double sd = predict(z.transpose()).stddev(0);
  return Vec::Constant(static_cast<Eigen::Index>(output_dim()), sd);
}

double GpPosterior::uncertainty(const Vec& z) const { return stddev(z).norm(); }

double GpPosterior::information_gain() const {
  const State& s = *state_;
  if (s.z.rows() == 0) return 0.0;
  const double log_det_half = s.chol.diagonal().array().log().sum();
  const double g =
      log_det_half - static_cast<double>(s.z.rows()) * std::log(s.prior.noise_std);
  return std::max(g, 0.0);
}

Mat GpPosterior::covariance(const Mat& candidates) const {
  const State& s = *state_;
  Mat cov = kernel_matrix(s.kernel, candidates, candidates);
  if (s.z.rows() == 0) return cov;
  const Mat kq = kernel_matrix(s.kernel, s.z, candidates);
  const Mat v = s.chol.triangularView<Eigen::Lower>().solve(kq);
  cov.noalias() -= v.transpose() * v;
  return cov;
}

bool GpPosterior::is_prefix_of(const GpPosterior& other) const {
  return state_ == other.state_ ||
         (lineage() == other.lineage() && size() <= other.size());
}

// ---------------------------------------------------------------------------

GpPosterior gp_fit(const PriorSpec& prior, const KernelSpec& kernel, const Mat& z, const Mat& y,
                   int n_episodes) {
  return GpPosterior::fit(prior, kernel, z, y, n_episodes);
}

Vec posterior_mean(const GpPosterior& gp, const Vec& z) { return gp.mean(z); }
Vec posterior_std(const GpPosterior& gp, const Vec& z) { return gp.stddev(z); }
double uncertainty_s(const GpPosterior& gp, const Vec& z) { return gp.uncertainty(z); }

double beta(int n_episodes, int horizon, const PriorSpec& prior, double delta, double gamma,
            int d_x) {
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("beta: delta must lie in (0, 1]");
  if (gamma < 0.0) throw InputError("beta: information gain must be nonnegative");
  if (d_x < 1) throw InputError("beta: d_x must be >= 1");
  if (n_episodes < 0 || horizon < 0) throw InputError("beta: negative episode count or horizon");
  const double inner = 2.0 * (gamma + 1.0 + std::log(static_cast<double>(d_x) / delta));
  return prior.rkhs_bound + prior.noise_std * std::sqrt(std::max(inner, 0.0));
}

double info_gain(const KernelSpec& kernel, const Mat& points, double sigma_w) {
  if (!(sigma_w > 0.0)) throw InputError("info_gain: sigma_w must be positive");
  if (points.rows() == 0) return 0.0;
  Mat a = kernel_matrix(kernel, points, points) / (sigma_w * sigma_w);
  a.diagonal().array() += 1.0;
  Eigen::LLT<Mat> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("info_gain: factorization of I + K / sigma_w^2 failed");
  }
  const Mat l = llt.matrixL();
  return l.diagonal().array().log().sum();
}

GreedySelection greedy_select(const Mat& covariance, double sigma_w, std::size_t k) {
  if (!(sigma_w > 0.0)) throw InputError("greedy_select: sigma_w must be positive");
  const Eigen::Index n = covariance.rows();
  GreedySelection sel;
  k = std::min<std::size_t>(k, static_cast<std::size_t>(n));
  Vec var = covariance.diagonal();
  std::vector<Vec> factors;
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  const double noise_var = sigma_w * sigma_w;
  for (std::size_t step = 0; step < k; ++step) {
    Eigen::Index best = -1;
    double best_var = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)] && var(i) > best_var) {
        best_var = var(i);
        best = i;
      }
    }
    const double v = std::max(best_var, 0.0);
    sel.gain += 0.5 * std::log1p(v / noise_var);
    sel.indices.push_back(static_cast<std::size_t>(best));
    taken[static_cast<std::size_t>(best)] = true;

    // Rank-one downdate of the posterior covariance after observing `best`.
    Vec col = covariance.col(best);
    for (const Vec& f : factors) col -= f * f(best);
    col /= std::sqrt(v + noise_var);
    var -= col.cwiseAbs2();
    factors.push_back(std::move(col));
  }
  return sel;
}

double max_info_gain_greedy(const KernelSpec& kernel, const Mat& candidates, int n,
                            double sigma_w) {
  if (n <= 0) throw InputError("max_info_gain_greedy: N must be positive");
  if (candidates.rows() == 0) throw InputError("max_info_gain_greedy: no candidates");
  if (n > candidates.rows()) {
    throw InputError("max_info_gain_greedy: N exceeds the number of candidates");
  }
  const Mat cov = kernel_matrix(kernel, candidates, candidates);
  return greedy_select(cov, sigma_w, static_cast<std::size_t>(n)).gain;
}

}  // namespace sbsrl
