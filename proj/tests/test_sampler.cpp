#include <doctest.h>

#include "oracles.hpp"
#include "sbsrl/error.hpp"
#include "sbsrl/sampler.hpp"

#include <cmath>
#include <memory>

using namespace sbsrl;

namespace {

KernelSpec se1(double var = 1.0) {
  return KernelSpec::isotropic(KernelKind::SquaredExponential, 1, 0.7, var);
}

Vec pt(double v) { return Vec::Constant(1, v); }

struct Moments {
  double mean0 = 0, mean1 = 0, c00 = 0, c01 = 0, c11 = 0;
};

// Joint moments of a sample kind at two points over many seeds.
template <typename Make>
Moments joint_moments(int n, Make make) {
  Moments m;
  std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    DynamicsSample smp = make(static_cast<std::uint64_t>(s) + 1000);
    a[static_cast<std::size_t>(s)] = smp.eval(pt(0.1))(0);
    b[static_cast<std::size_t>(s)] = smp.eval(pt(0.6))(0);
  }
  for (int s = 0; s < n; ++s) {
    m.mean0 += a[static_cast<std::size_t>(s)] / n;
    m.mean1 += b[static_cast<std::size_t>(s)] / n;
  }
  for (int s = 0; s < n; ++s) {
    const double da = a[static_cast<std::size_t>(s)] - m.mean0;
    const double db = b[static_cast<std::size_t>(s)] - m.mean1;
    m.c00 += da * da / (n - 1);
    m.c01 += da * db / (n - 1);
    m.c11 += db * db / (n - 1);
  }
  return m;
}

}  // namespace

TEST_CASE("prior samples have the GP marginal and joint moments") {
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.1};
  const KernelSpec k = se1();
  const double k01 = oracle::se(pt(0.1), pt(0.6), k.lengthscales, 1.0);
  const int n = 2000;
  SUBCASE("pathwise") {
    const Moments m = joint_moments(n, [&](std::uint64_t s) {
      return DynamicsSample::pathwise(prior, k, s);
    });
    CHECK(std::abs(m.mean0) < 3.0 / std::sqrt(n));
    CHECK(m.c00 > 0.85);
    CHECK(m.c00 < 1.15);
    CHECK(std::abs(m.c01 - k01) < 0.1);
    CHECK(std::abs(m.c11 - 1.0) < 0.1);
  }
  SUBCASE("random features") {
    const Moments m = joint_moments(n, [&](std::uint64_t s) {
      return DynamicsSample::random_features(prior, k, s, 512);
    });
    CHECK(std::abs(m.mean0) < 3.0 / std::sqrt(n));
    CHECK(m.c00 > 0.85);
    CHECK(m.c00 < 1.15);
    CHECK(std::abs(m.c01 - k01) < 0.1);
  }
}

TEST_CASE("degenerate kernel gives the prior mean") {
  const PriorSpec prior{MeanFunction::affine(Mat::Constant(1, 1, 2.0), pt(0.5)), 1.0, 0.1};
  DynamicsSample s = DynamicsSample::pathwise(prior, se1(1e-12), 9);
  for (double z : {-1.0, 0.0, 0.3, 2.0}) CHECK(std::abs(s.eval(pt(z))(0) - (2.0 * z + 0.5)) < 1e-5);
}

TEST_CASE("samples are deterministic functions of their seed") {
  const PriorSpec prior{MeanFunction::zero(2), 1.0, 0.1};
  const KernelSpec k = KernelSpec::isotropic(KernelKind::SquaredExponential, 2, 0.5, 1.0);
  DynamicsSample a = DynamicsSample::pathwise(prior, k, 42);
  DynamicsSample b = DynamicsSample::pathwise(prior, k, 42);
  const Vec z1 = Vec::Constant(2, 0.3), z2 = Vec::Constant(2, -0.4);
  const Vec v1 = a.eval(z1);
  const Vec v2 = a.eval(z2);
  CHECK(a.eval(z1) == v1);  // cache hit, bit-identical
  CHECK(b.eval(z1) == v1);
  CHECK(b.eval(z2) == v2);
  CHECK(a.cache_size() == 2);
}

TEST_CASE("truncation clips into the band and re-clips the cache") {
  Rng rng(4);
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.1};
  const KernelSpec k = se1(1.0);
  Mat z(4, 1), y(4, 1);
  z << -1.0, -0.3, 0.2, 0.9;
  y << 0.4, -0.2, 0.1, 0.3;
  auto gp = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z, y));

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DynamicsSample s = DynamicsSample::pathwise(prior, k, seed);
    std::vector<double> before;
    for (double q : {-0.8, 0.0, 0.5}) before.push_back(s.eval(pt(q))(0));
    const double b = 0.5;
    s.truncate(gp, b);
    const Mat& cz = s.cached_inputs();
    const Prediction p = gp->predict(cz);
    for (Eigen::Index i = 0; i < cz.rows(); ++i) {
      const double lo = p.mean(i, 0) - b * p.stddev(i), hi = p.mean(i, 0) + b * p.stddev(i);
      const double v = s.cached_values()(i, 0);
      CHECK(v >= lo - 1e-12);
      CHECK(v <= hi + 1e-12);
      // Values already inside the band do not move.
      if (s.cached_raw()(i, 0) >= lo && s.cached_raw()(i, 0) <= hi) {
        CHECK(v == s.cached_raw()(i, 0));
      }
    }
    // New evaluations respect the band too.
    const Vec fresh = s.eval(pt(1.4));
    const Prediction pf = gp->predict(pt(1.4).transpose());
    CHECK(std::abs(fresh(0) - pf.mean(0, 0)) <= b * pf.stddev(0) + 1e-12);
  }
}

TEST_CASE("zero-width layer returns the posterior mean") {
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.1};
  const KernelSpec k = se1();
  Mat z(2, 1), y(2, 1);
  z << 0.0, 1.0;
  y << 0.5, -0.5;
  auto gp = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z, y));
  DynamicsSample s = DynamicsSample::random_features(prior, k, 3);
  s.truncate(gp, 0.0);
  for (double q : {-0.5, 0.25, 2.0}) CHECK(s.eval(pt(q))(0) == gp->mean(pt(q))(0));
}

TEST_CASE("clip arithmetic: mu + 2 beta sigma becomes mu + beta sigma") {
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.1};
  const KernelSpec k = se1();
  auto gp = std::make_shared<const GpPosterior>(prior, k);  // mu = 0, sigma = 1
  const Mat q = pt(0.0).transpose();
  Mat values = Mat::Constant(1, 1, 2.0 * 0.75);
  apply_layers({TruncationLayer{gp, 0.75}}, q, values);
  CHECK(values(0, 0) == doctest::Approx(0.75));
}

TEST_CASE("successive layers equal one clip to the intersected band") {
  Rng rng(17);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.2};
  const KernelSpec k = se1();
  Mat z(3, 1), y(3, 1);
  z << -0.5, 0.1, 0.8;
  y << 0.3, 0.2, -0.4;
  auto g0 = std::make_shared<const GpPosterior>(prior, k);
  auto g1 = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z.topRows(1), y.topRows(1)));
  auto g2 = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z, y));
  const std::vector<TruncationLayer> layers{{g0, 1.0}, {g1, 0.8}, {g2, 0.6}};
  Mat q(50, 1);
  for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, 0) = u(rng);
  Mat values(50, 1);
  for (Eigen::Index i = 0; i < values.rows(); ++i) values(i, 0) = u(rng);
  Mat seq = values;
  apply_layers(layers, q, seq);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double lo = -1e300, hi = 1e300;
    for (const auto& l : layers) {
      const Prediction p = l.gp->predict(q.row(i));
      lo = std::max(lo, p.mean(0, 0) - l.beta * p.stddev(0));
      hi = std::min(hi, p.mean(0, 0) + l.beta * p.stddev(0));
    }
    if (lo <= hi) CHECK(seq(i, 0) == doctest::Approx(std::clamp(values(i, 0), lo, hi)).epsilon(1e-12));
  }
}

TEST_CASE("posterior features follow the posterior mean and shrink near data") {
  const PriorSpec prior{MeanFunction::zero(1), 1.0, 0.05};
  const KernelSpec k = se1();
  Mat z(3, 1), y(3, 1);
  z << -0.5, 0.0, 0.5;
  y << 0.2, 0.6, -0.1;
  auto gp = std::make_shared<const GpPosterior>(GpPosterior::fit(prior, k, z, y));
  const int n = 800;
  double mean = 0.0, sq = 0.0;
  for (int s = 0; s < n; ++s) {
    DynamicsSample smp = DynamicsSample::posterior_features(gp, 500 + static_cast<std::uint64_t>(s), 512);
    const double v = smp.eval(pt(0.1))(0);
    mean += v / n;
    sq += v * v / n;
  }
  const double sd = gp->stddev(pt(0.1))(0);
  CHECK(std::abs(mean - gp->mean(pt(0.1))(0)) < 4.0 * sd / std::sqrt(n) + 0.01);
  CHECK(std::sqrt(std::max(sq - mean * mean, 0.0)) < 2.0 * sd + 0.01);
}

TEST_CASE("predict_many matches separate predictions") {
  Rng rng(2);
  const auto inst = oracle::random_gp_instance(rng, 8);
  const GpPosterior full = GpPosterior::fit(inst.prior, inst.kernel, inst.z, inst.y);
  const GpPosterior part = GpPosterior::fit(inst.prior, inst.kernel, inst.z.topRows(3), inst.y.topRows(3));
  const GpPosterior ext = part.extended(inst.z.bottomRows(5), inst.y.bottomRows(5), 1);
  const auto preds = predict_many({&part, &ext, &full}, inst.queries);
  const GpPosterior* posts[] = {&part, &ext, &full};
  for (int i = 0; i < 3; ++i) {
    const Prediction ref = posts[i]->predict(inst.queries);
    CHECK((preds[static_cast<std::size_t>(i)].mean - ref.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((preds[static_cast<std::size_t>(i)].stddev - ref.stddev).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("sample budget examples") {
  CHECK(sample_budget_from_exponent(0.5, std::log(2.0)).m == 1);
  CHECK(sample_budget_from_exponent(1.0, 3.0).m == 1);
  CHECK(sample_budget_from_exponent(0.1, std::log(2.0)).m == 4);
  const SampleBudget capped = sample_budget_from_exponent(0.1, 800.0, 1000);
  CHECK(capped.capped);
  CHECK(capped.m == 1000);
  CHECK(capped.log_m == doctest::Approx(std::log(-std::log(0.1)) + 800.0));
  BudgetInputs in;
  in.delta = 0.1;
  in.rkhs_bound = 1.0;
  in.d_x = 2;
  in.small_ball_exponent = 0.3;
  CHECK(sample_budget(in).m == oracle::sample_count(0.1, 2 * (0.5 + 0.3)));
  CHECK_THROWS_AS(sample_budget_from_exponent(0.0, 1.0), InputError);
}

TEST_CASE("small-ball exponent: limits and monotonicity") {
  const KernelSpec k = se1();
  SmallBallConfig cfg;
  const SmallBallEstimator est(k, cfg);
  CHECK(est.exponent(1e6) == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(est.exponent(1e-9) == doctest::Approx(std::log(4001.0)));
  double prev = 1e300;
  for (double z : {0.05, 0.1, 0.3, 0.6, 1.0, 2.0, 4.0}) {
    const double e = est.exponent(z);
    CHECK(e <= prev);
    prev = e;
  }
  CHECK(small_ball_exponent(k, 0.5, cfg) == est.exponent(0.5));
}

TEST_CASE("tightening and exploration threshold hand values") {
  CHECK(tightening_delta(0.0, 4, 10, 1.0, 0.1) == 0.0);
  CHECK(tightening_delta(0.01, 4, 10, 1.0, 0.1) == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(tightening_delta(0.02, 4, 10, 1.0, 0.1) ==
        doctest::Approx(2.0 * tightening_delta(0.01, 4, 10, 1.0, 0.1)));
  CHECK_THROWS_AS(tightening_delta(0.01, 4, 10, 1.0, 0.0), InputError);

  CHECK(exploration_threshold(0.0, 0.1, 1.0, 10, 1.0) == 0.0);
  CHECK(exploration_threshold(1.0, 0.1, 1.0, 10, 1.0) == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(exploration_threshold(1.0, 0.1, 1.0, 10, 2.0) ==
        doctest::Approx(0.5 * exploration_threshold(1.0, 0.1, 1.0, 10, 1.0)));
  CHECK_THROWS_AS(exploration_threshold(1.0, 0.1, 0.0, 10, 1.0), InputError);
  CHECK_THROWS_AS(exploration_threshold(1.0, 0.1, 1.0, 10, 0.0), InputError);
}
