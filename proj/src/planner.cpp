#include "sbsrl/planner.hpp"

#include "sbsrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace sbsrl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Mat encode_rows(const EnvSpec& env, const Mat& x, const Mat& a) {
  Mat z(x.rows(), static_cast<Eigen::Index>(encoded_dim(env)));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    z.row(i) = encode_input(env, x.row(i).transpose(), a.row(i).transpose()).transpose();
  }
  return z;
}

Mat apply_rows(const EnvSpec& env, const Mat& x, const Mat& out) {
  if (env.kind == EnvKind::SyntheticRkhs) return out;
  return x + out;
}

Prediction slice(const Prediction& p, Eigen::Index offset, Eigen::Index rows) {
  return Prediction{p.mean.middleRows(offset, rows), p.stddev.segment(offset, rows)};
}

void mean_and_se(const std::vector<double>& v, double& mean, double& se) {
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : v) ss += (e - mean) * (e - mean);
  se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
}

Mat standard_normals(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = n(rng);
  }
  return out;
}

}  // namespace

ActionPlan ActionPlan::zeros(int horizon, int action_dim) {
  return ActionPlan{Mat::Zero(horizon, action_dim)};
}

ActionPlan clamp_plan(const EnvSpec& spec, ActionPlan plan) {
  if (plan.action_dim() != spec.d_a) throw InputError("plan: action dimension mismatch");
  for (Eigen::Index t = 0; t < plan.actions.rows(); ++t) {
    plan.actions.row(t) = plan.actions.row(t)
                              .cwiseMax(spec.action_lo.transpose())
                              .cwiseMin(spec.action_hi.transpose());
  }
  return plan;
}

ActionPlan stabilizer_plan(const EnvSpec& spec, const PdGains& gains,
                           const std::function<Vec(const Vec&, const Vec&)>& model) {
  ActionPlan plan = ActionPlan::zeros(spec.horizon, spec.d_a);
  Vec x = spec.init_mean;
  for (int t = 0; t < spec.horizon; ++t) {
    const Vec a = pd_stabilizer(spec, x, gains);
    plan.actions.row(t) = a.transpose();
    x = model(x, a);
  }
  return plan;
}

Trajectory rollout_model(const EnvSpec& spec, const StepModel& model, const ActionPlan& plan,
                         const Vec& x0, int horizon, double sigma_w, Rng& rng) {
  if (horizon < 0 || horizon > plan.horizon()) {
    throw InputError("rollout_model: horizon exceeds the plan length");
  }
  Trajectory tr;
  tr.states.resize(horizon + 1, x0.size());
  tr.actions.resize(horizon, spec.d_a);
  tr.rewards = Vec::Zero(horizon);
  tr.costs = Vec::Zero(horizon);
  tr.states.row(0) = x0.transpose();
  std::normal_distribution<double> n(0.0, 1.0);
  Vec x = x0;
  for (int t = 0; t < horizon; ++t) {
    const Vec a = clamp_action(spec, plan.actions.row(t).transpose());
    tr.actions.row(t) = a.transpose();
    tr.rewards(t) = env_reward(spec, x, a);
    tr.costs(t) = env_cost(spec, x, a);
    Vec next = model(x, a);
    for (Eigen::Index i = 0; i < next.size(); ++i) next(i) += sigma_w * n(rng);
    if (!next.allFinite()) {
      tr.valid = false;
      tr.reward_sum = kNegInf;
      tr.states.conservativeResize(t + 1, Eigen::NoChange);
      return tr;
    }
    tr.states.row(t + 1) = next.transpose();
    x = next;
  }
  tr.reward_sum = tr.rewards.sum();
  tr.cost_sum = tr.costs.sum();
  tr.max_cost = horizon > 0 ? tr.costs.maxCoeff() : 0.0;
  return tr;
}

std::string_view to_string(RolloutMode mode) {
  return mode == RolloutMode::PerSample ? "per-sample" : "ts1";
}

RolloutMode parse_rollout_mode(std::string_view name) {
  if (name == "per-sample") return RolloutMode::PerSample;
  if (name == "ts1") return RolloutMode::Ts1;
  throw InputError("unknown rollout mode '" + std::string(name) + "'");
}

std::string_view to_string(UncertaintyMetric metric) {
  return metric == UncertaintyMetric::Epistemic ? "epistemic" : "combined";
}

UncertaintyMetric parse_uncertainty_metric(std::string_view name) {
  if (name == "epistemic") return UncertaintyMetric::Epistemic;
  if (name == "combined") return UncertaintyMetric::Combined;
  throw InputError("unknown uncertainty metric '" + std::string(name) + "'");
}

void McConfig::validate() const {
  if (n_mean < 1 || n_cost < 1) throw InputError("mc: rollout counts must be >= 1");
}

// ---------------------------------------------------------------------------

GpPlanningModel::GpPlanningModel(const EnvSpec& env, std::shared_ptr<const GpPosterior> gp,
                                 std::vector<DynamicsSample>* samples)
    : env_(&env), gp_(std::move(gp)), samples_(samples) {
  if (!gp_) throw InputError("planning model: null posterior");
}

std::size_t GpPlanningModel::n_samples() const { return samples_ ? samples_->size() : 0; }

void GpPlanningModel::step(StepBatch& mean, std::vector<StepBatch>& samples, RolloutMode mode) {
  const std::size_t m_count = samples.size();
  if (m_count > n_samples()) throw InputError("planning model: too many sample batches");

  // Stack every particle's query so one triangular solve serves all layers.
  Eigen::Index total = mean.x.rows();
  for (const auto& b : samples) total += b.x.rows();
  const auto d = static_cast<Eigen::Index>(encoded_dim(*env_));
  Mat q(total, d);
  std::vector<Eigen::Index> offset(m_count + 1);
  q.topRows(mean.x.rows()) = encode_rows(*env_, mean.x, mean.a);
  Eigen::Index off = mean.x.rows();
  for (std::size_t m = 0; m < m_count; ++m) {
    offset[m] = off;
    q.middleRows(off, samples[m].x.rows()) = encode_rows(*env_, samples[m].x, samples[m].a);
    off += samples[m].x.rows();
  }

  std::vector<const GpPosterior*> posts{gp_.get()};
  auto index_of = [&posts](const GpPosterior* p) {
    for (std::size_t i = 0; i < posts.size(); ++i) {
      if (posts[i] == p) return i;
    }
    posts.push_back(p);
    return posts.size() - 1;
  };
  std::vector<std::vector<std::size_t>> layer_index(m_count);
  if (mode == RolloutMode::PerSample) {
    for (std::size_t m = 0; m < m_count; ++m) {
      for (const auto& layer : (*samples_)[m].layers()) {
        layer_index[m].push_back(index_of(layer.gp.get()));
      }
    }
  }
  const std::vector<Prediction> preds = predict_many(posts, q);
  const Prediction& base = preds[0];

  mean.next = apply_rows(*env_, mean.x, base.mean.topRows(mean.x.rows()));
  mean.stddev = base.stddev.head(mean.x.rows());

  for (std::size_t m = 0; m < m_count; ++m) {
    StepBatch& b = samples[m];
    const Eigen::Index rows = b.x.rows();
    if (mode == RolloutMode::Ts1) {
      b.next = apply_rows(*env_, b.x, base.mean.middleRows(offset[m], rows));
      b.stddev = base.stddev.segment(offset[m], rows);
      continue;
    }
    DynamicsSample& sample = (*samples_)[m];
    Mat values;
    if (sample.kind() == SampleKind::Pathwise) {
      values.resize(rows, env_->d_x);
      for (Eigen::Index i = 0; i < rows; ++i) {
        values.row(i) = sample.eval(q.row(offset[m] + i).transpose()).transpose();
      }
    } else {
      values = sample.raw_batch(q.middleRows(offset[m], rows));
      std::vector<Prediction> layer_preds;
      layer_preds.reserve(layer_index[m].size());
      for (std::size_t li : layer_index[m]) layer_preds.push_back(slice(preds[li], offset[m], rows));
      apply_layers(sample.layers(), layer_preds, values);
    }
    b.next = apply_rows(*env_, b.x, values);
    b.stddev = base.stddev.segment(offset[m], rows);
  }
}

FunctionPlanningModel::FunctionPlanningModel(int d_x, StepModel mean, StdFn stddev,
                                             std::vector<StepModel> samples)
    : d_x_(d_x), mean_(std::move(mean)), stddev_(std::move(stddev)), samples_(std::move(samples)) {}

void FunctionPlanningModel::step(StepBatch& mean, std::vector<StepBatch>& samples,
                                 RolloutMode mode) {
  auto run = [&](StepBatch& b, const StepModel& f) {
    b.next.resize(b.x.rows(), d_x_);
    b.stddev.resize(b.x.rows());
    for (Eigen::Index i = 0; i < b.x.rows(); ++i) {
      const Vec x = b.x.row(i).transpose();
      const Vec a = b.a.row(i).transpose();
      b.next.row(i) = f(x, a).transpose();
      b.stddev(i) = stddev_ ? stddev_(x, a) : 0.0;
    }
  };
  run(mean, mean_);
  for (std::size_t m = 0; m < samples.size(); ++m) {
    run(samples[m], mode == RolloutMode::Ts1 ? mean_ : samples_.at(m));
  }
}

// ---------------------------------------------------------------------------

std::vector<ReturnEstimates> estimate_returns_batch(PlanningModel& model, const EnvSpec& spec,
                                                    const std::vector<ActionPlan>& plans,
                                                    const McConfig& mc, std::uint64_t noise_seed,
                                                    const RolloutStart& start) {
  mc.validate();
  const auto n_plans = static_cast<Eigen::Index>(plans.size());
  std::vector<ReturnEstimates> out(plans.size());
  if (plans.empty()) return out;
  const int horizon = plans.front().horizon();
  for (const auto& p : plans) {
    if (p.horizon() != horizon || p.action_dim() != spec.d_a) {
      throw InputError("estimate_returns: plans must share horizon and action dimension");
    }
  }
  const std::size_t m_count = model.n_samples();
  const int d_x = model.state_dim();
  const Eigen::Index nm = mc.n_mean;
  const Eigen::Index nc = mc.n_cost;
  const double sigma_w = spec.noise_std;
  const double sqrt_dx = std::sqrt(static_cast<double>(d_x));
  const double s_offset =
      mc.metric == UncertaintyMetric::Combined ? sigma_w * sqrt_dx : 0.0;

  // Common random numbers: one stream for starts and per-step noise.
  Rng rng(noise_seed);
  auto draw_start = [&]() -> Vec {
    if (start.state) return *start.state;
    return env_reset(spec, rng);
  };
  Mat mean_start(nm, d_x);
  for (Eigen::Index k = 0; k < nm; ++k) mean_start.row(k) = draw_start().transpose();
  std::vector<Mat> sample_start(m_count, Mat(nc, d_x));
  for (auto& s : sample_start) {
    for (Eigen::Index k = 0; k < nc; ++k) s.row(k) = draw_start().transpose();
  }

  StepBatch mean;
  mean.x.resize(n_plans * nm, d_x);
  mean.a.resize(n_plans * nm, spec.d_a);
  for (Eigen::Index p = 0; p < n_plans; ++p) mean.x.middleRows(p * nm, nm) = mean_start;
  std::vector<StepBatch> sb(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    sb[m].x.resize(n_plans * nc, d_x);
    sb[m].a.resize(n_plans * nc, spec.d_a);
    for (Eigen::Index p = 0; p < n_plans; ++p) sb[m].x.middleRows(p * nc, nc) = sample_start[m];
  }

  Mat jr = Mat::Zero(n_plans, nm), jcm = Mat::Zero(n_plans, nm), js = Mat::Zero(n_plans, nm);
  std::vector<Mat> jc(m_count, Mat::Zero(n_plans, nc));
  std::vector<char> valid(plans.size(), 1);

  auto accumulate = [&](const Mat& x, const Mat& a, Eigen::Index per, Mat* reward, Mat& cost) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vec xi = x.row(i).transpose();
      const Vec ai = a.row(i).transpose();
      if (reward) (*reward)(i / per, i % per) += env_reward(spec, xi, ai);
      cost(i / per, i % per) += env_cost(spec, xi, ai);
    }
  };
  auto finish_rows = [&](StepBatch& b, Eigen::Index per, const Mat* restart) {
    for (Eigen::Index i = 0; i < b.next.rows(); ++i) {
      if (!b.next.row(i).allFinite()) {
        valid[static_cast<std::size_t>(i / per)] = 0;
        b.next.row(i) = restart->row(i % per);
      }
    }
    b.x = b.next;
  };

  for (int t = 0; t < horizon; ++t) {
    for (Eigen::Index p = 0; p < n_plans; ++p) {
      const auto row = plans[static_cast<std::size_t>(p)].actions.row(t);
      for (Eigen::Index k = 0; k < nm; ++k) mean.a.row(p * nm + k) = row;
      for (auto& b : sb) {
        for (Eigen::Index k = 0; k < nc; ++k) b.a.row(p * nc + k) = row;
      }
    }
    accumulate(mean.x, mean.a, nm, &jr, jcm);
    for (std::size_t m = 0; m < m_count; ++m) accumulate(sb[m].x, sb[m].a, nc, nullptr, jc[m]);

    model.step(mean, sb, mc.mode);

    for (Eigen::Index i = 0; i < mean.x.rows(); ++i) {
      js(i / nm, i % nm) += mean.stddev(i) * sqrt_dx + s_offset;
    }
    const Mat mean_noise = standard_normals(nm, d_x, rng) * sigma_w;
    for (Eigen::Index p = 0; p < n_plans; ++p) mean.next.middleRows(p * nm, nm) += mean_noise;
    finish_rows(mean, nm, &mean_start);
    for (std::size_t m = 0; m < m_count; ++m) {
      Mat noise = standard_normals(nc, d_x, rng) * sigma_w;
      if (mc.mode == RolloutMode::Ts1) {
        const Mat xi = standard_normals(nc, d_x, rng);
        for (Eigen::Index p = 0; p < n_plans; ++p) {
          for (Eigen::Index k = 0; k < nc; ++k) {
            sb[m].next.row(p * nc + k) += sb[m].stddev(p * nc + k) * xi.row(k);
          }
        }
      }
      for (Eigen::Index p = 0; p < n_plans; ++p) sb[m].next.middleRows(p * nc, nc) += noise;
      finish_rows(sb[m], nc, &sample_start[m]);
    }
  }

  for (Eigen::Index p = 0; p < n_plans; ++p) {
    ReturnEstimates& e = out[static_cast<std::size_t>(p)];
    e.n_mc = mc.n_mean;
    e.valid = valid[static_cast<std::size_t>(p)] != 0;
    std::vector<double> buf(static_cast<std::size_t>(nm));
    for (Eigen::Index k = 0; k < nm; ++k) buf[static_cast<std::size_t>(k)] = jr(p, k);
    mean_and_se(buf, e.j_r, e.j_r_se);
    for (Eigen::Index k = 0; k < nm; ++k) buf[static_cast<std::size_t>(k)] = jcm(p, k);
    mean_and_se(buf, e.j_c_mean, e.j_c_mean_se);
    e.j_s = js.row(p).mean();
    e.j_c.resize(static_cast<Eigen::Index>(m_count));
    e.j_c_se.resize(static_cast<Eigen::Index>(m_count));
    std::vector<double> cbuf(static_cast<std::size_t>(nc));
    for (std::size_t m = 0; m < m_count; ++m) {
      for (Eigen::Index k = 0; k < nc; ++k) cbuf[static_cast<std::size_t>(k)] = jc[m](p, k);
      double mu = 0.0, se = 0.0;
      mean_and_se(cbuf, mu, se);
      e.j_c(static_cast<Eigen::Index>(m)) = mu;
      e.j_c_se(static_cast<Eigen::Index>(m)) = se;
    }
    if (!e.valid) e.j_r = kNegInf;
  }
  return out;
}

ReturnEstimates estimate_returns(const ActionPlan& plan, PlanningModel& model,
                                 const EnvSpec& spec, const McConfig& mc,
                                 std::uint64_t noise_seed, const RolloutStart& start) {
  return estimate_returns_batch(model, spec, {plan}, mc, noise_seed, start).front();
}

double penalized_score(const ReturnEstimates& est, double budget, double tightening,
                       double d_sigma, const PenaltyWeights& weights, bool exploration_active) {
  if (!est.valid) return kNegInf;
  double violation = 0.0;
  for (Eigen::Index m = 0; m < est.j_c.size(); ++m) {
    violation += std::max(est.j_c(m) - budget + tightening, 0.0);
  }
  double score = est.j_r - weights.lambda_c * violation;
  if (exploration_active) score -= weights.lambda_sigma * std::max(d_sigma - est.j_s, 0.0);
  return score;
}

bool plan_is_safe(const ReturnEstimates& est, const Thresholds& th) {
  if (!est.valid) return false;
  const double limit = th.budget - th.tightening + th.tol;
  for (Eigen::Index m = 0; m < est.j_c.size(); ++m) {
    if (!(est.j_c(m) <= limit)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

void IcemParams::validate() const {
  if (population < 1) throw InputError("icem: population must be >= 1");
  if (iterations < 1) throw InputError("icem: iterations must be >= 1");
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) {
    throw InputError("icem: elite fraction must lie in (0, 1]");
  }
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) {
    throw InputError("icem: elite-keep fraction must lie in [0, 1]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("icem: momentum must lie in [0, 1)");
  if (!(init_std > 0.0) || !(min_std >= 0.0)) throw InputError("icem: std settings invalid");
}

int IcemParams::n_elites() const {
  return std::clamp(static_cast<int>(std::lround(elite_fraction * population)), 1, population);
}

Mat colored_noise(int length, int n_sequences, double exponent, Rng& rng) {
  if (length < 1 || n_sequences < 0) throw InputError("colored_noise: invalid shape");
  // Real Fourier series with power-law amplitudes. Each term has a fixed
  // variance at every t, so the exact per-entry variance is known.
  const int half = length / 2;
  std::vector<double> scale(static_cast<std::size_t>(half) + 1);
  double var = 0.0;
  for (int k = 0; k <= half; ++k) {
    const double f = static_cast<double>(std::max(k, 1)) / length;
    scale[static_cast<std::size_t>(k)] = std::pow(f, -exponent / 2.0);
    var += scale[static_cast<std::size_t>(k)] * scale[static_cast<std::size_t>(k)];
  }
  const double norm = 1.0 / std::sqrt(var);
  Mat cos_t(length, half + 1), sin_t(length, half + 1);
  for (int t = 0; t < length; ++t) {
    for (int k = 0; k <= half; ++k) {
      const double w = 2.0 * std::numbers::pi * k * t / length;
      cos_t(t, k) = std::cos(w);
      sin_t(t, k) = std::sin(w);
    }
  }
  const bool nyquist = length % 2 == 0 && half > 0;
  std::normal_distribution<double> n(0.0, 1.0);
  Mat out = Mat::Zero(length, n_sequences);
  Vec a(half + 1), b(half + 1);
  for (int s = 0; s < n_sequences; ++s) {
    for (int k = 0; k <= half; ++k) {
      a(k) = n(rng) * scale[static_cast<std::size_t>(k)];
      b(k) = n(rng) * scale[static_cast<std::size_t>(k)];
    }
    b(0) = 0.0;
    if (nyquist) b(half) = 0.0;
    // With no sine partner, the k = 0 and Nyquist terms still have variance
    // scale^2 because cos^2 = 1 there.
    out.col(s) = (cos_t * a + sin_t * b) * norm;
  }
  return out;
}

IcemResult icem_plan(const BatchScore& score, const EnvSpec& spec, int horizon,
                     const IcemParams& params, const std::vector<ActionPlan>& warm_starts,
                     Rng& rng) {
  params.validate();
  if (horizon < 1) throw InputError("icem: horizon must be >= 1");
  const int d_a = spec.d_a;
  for (const auto& w : warm_starts) {
    if (w.horizon() != horizon || w.action_dim() != d_a) {
      throw InputError("icem: warm-start plan shape mismatch");
    }
  }
  const Vec half_range = (spec.action_hi - spec.action_lo) / 2.0;
  const Vec mid = (spec.action_hi + spec.action_lo) / 2.0;

  Mat mean(horizon, d_a);
  if (!warm_starts.empty()) {
    mean = clamp_plan(spec, warm_starts.front()).actions;
  } else {
    mean = mid.transpose().replicate(horizon, 1);
  }
  const Mat range_row = half_range.transpose().replicate(horizon, 1);
  Mat stddev = params.init_std * range_row;
  const Mat std_floor = params.min_std * range_row;

  IcemResult res;
  res.best.actions = mean;
  std::vector<ActionPlan> kept;
  const int n_elites = params.n_elites();

  for (int it = 0; it < params.iterations; ++it) {
    std::vector<ActionPlan> cands;
    cands.reserve(static_cast<std::size_t>(params.population) + kept.size() + warm_starts.size() +
                  1);
    const Mat noise = colored_noise(horizon, params.population * d_a, params.noise_exponent, rng);
    for (int p = 0; p < params.population; ++p) {
      ActionPlan c{mean};
      for (int j = 0; j < d_a; ++j) {
        c.actions.col(j).array() += stddev.col(j).array() * noise.col(p * d_a + j).array();
      }
      cands.push_back(clamp_plan(spec, std::move(c)));
    }
    if (it == 0) {
      for (const auto& w : warm_starts) cands.push_back(clamp_plan(spec, w));
    }
    for (auto& k : kept) cands.push_back(std::move(k));
    kept.clear();
    if (it == params.iterations - 1 && params.iterations > 1) {
      cands.push_back(clamp_plan(spec, ActionPlan{mean}));
    }

    std::vector<double> scores = score(cands);
    if (scores.size() != cands.size()) throw InputError("icem: scorer returned wrong length");
    res.evaluations += static_cast<int>(cands.size());
    for (auto& s : scores) {
      if (std::isnan(s)) s = kNegInf;
    }
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });
    if (scores[order[0]] > res.best_score) {
      res.best_score = scores[order[0]];
      res.best = cands[order[0]];
    }

    std::vector<std::size_t> elites;
    for (std::size_t i = 0; i < order.size() && static_cast<int>(elites.size()) < n_elites; ++i) {
      if (scores[order[i]] > kNegInf) elites.push_back(order[i]);
    }
    double elite_mean = kNegInf;
    if (!elites.empty()) {
      Mat e_mean = Mat::Zero(horizon, d_a);
      for (std::size_t i : elites) e_mean += cands[i].actions;
      e_mean /= static_cast<double>(elites.size());
      Mat e_var = Mat::Zero(horizon, d_a);
      for (std::size_t i : elites) {
        e_var.array() += (cands[i].actions - e_mean).array().square();
      }
      e_var /= static_cast<double>(elites.size());
      mean = params.momentum * mean + (1.0 - params.momentum) * e_mean;
      stddev = params.momentum * stddev + (1.0 - params.momentum) * Mat(e_var.array().sqrt());
      stddev = stddev.cwiseMax(std_floor);
      elite_mean = 0.0;
      for (std::size_t i : elites) elite_mean += scores[i];
      elite_mean /= static_cast<double>(elites.size());
      if (params.shift_elites) {
        const auto n_keep = static_cast<std::size_t>(
            std::lround(params.keep_fraction * static_cast<double>(elites.size())));
        for (std::size_t i = 0; i < n_keep; ++i) kept.push_back(cands[elites[i]]);
      }
    }
    res.best_history.push_back(res.best_score);
    res.elite_mean_history.push_back(elite_mean);
  }

  res.mean.actions = mean;
  if (res.best_score == kNegInf) {
    res.all_invalid = true;
    res.best = warm_starts.empty() ? ActionPlan{mean} : warm_starts.front();
  }
  return res;
}

IcemResult icem_plan(const std::function<double(const ActionPlan&)>& score, const EnvSpec& spec,
                     const IcemParams& params, const std::optional<ActionPlan>& warm_start,
                     Rng& rng) {
  BatchScore batch = [&score](const std::vector<ActionPlan>& plans) {
    std::vector<double> out;
    out.reserve(plans.size());
    for (const auto& p : plans) out.push_back(score(p));
    return out;
  };
  std::vector<ActionPlan> warm;
  if (warm_start) warm.push_back(*warm_start);
  return icem_plan(batch, spec, spec.horizon, params, warm, rng);
}

FeasibilityResult feasibility_probe(PlanningModel& model, const EnvSpec& spec,
                                    const Thresholds& th, const PenaltyWeights& weights,
                                    const IcemParams& params, const McConfig& mc,
                                    const std::vector<ActionPlan>& warm_starts,
                                    std::uint64_t seed, const RolloutStart& start) {
  FeasibilityResult res;
  const int horizon = warm_starts.empty() ? spec.horizon : warm_starts.front().horizon();
  const std::uint64_t noise_seed = derive_seed(seed, "probe-noise");
  BatchScore scorer = [&](const std::vector<ActionPlan>& plans) {
    const auto ests = estimate_returns_batch(model, spec, plans, mc, noise_seed, start);
    std::vector<double> scores(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const auto& e = ests[i];
      if (!e.valid) {
        scores[i] = kNegInf;
        continue;
      }
      double violation = 0.0;
      for (Eigen::Index m = 0; m < e.j_c.size(); ++m) {
        violation += std::max(e.j_c(m) - th.budget + th.tightening, 0.0);
      }
      scores[i] = e.j_s - weights.lambda_c * violation;
      if (plan_is_safe(e, th) && e.j_s > res.best_safe_uncertainty) {
        res.best_safe_uncertainty = e.j_s;
        res.best_safe_plan = plans[i];
        res.safe_feasible = true;
      }
    }
    return scores;
  };
  Rng rng(derive_seed(seed, "probe-search"));
  const IcemResult r = icem_plan(scorer, spec, horizon, params, warm_starts, rng);
  res.evaluations = r.evaluations;
  res.explore_feasible =
      th.d_sigma <= 0.0 || (res.safe_feasible && res.best_safe_uncertainty >= th.d_sigma - th.tol);
  return res;
}

}  // namespace sbsrl
