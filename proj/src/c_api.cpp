#include "sbsrl/sbsrl.h"

#include "sbsrl/error.hpp"
#include "sbsrl/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>

struct sbsrl_gp {
  std::shared_ptr<const sbsrl::GpPosterior> post;
};

struct sbsrl_experiment {
  sbsrl::ExperimentConfig cfg;
  std::string summary;
};

namespace {

thread_local std::string g_last_error;

sbsrl_status fail(sbsrl_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
sbsrl_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SBSRL_OK;
  } catch (const sbsrl::ConfigError& e) {
    return fail(SBSRL_E_CONFIG, e.what());
  } catch (const sbsrl::InputError& e) {
    return fail(SBSRL_E_INPUT, e.what());
  } catch (const sbsrl::NumericalError& e) {
    return fail(SBSRL_E_NUMERICAL, e.what());
  } catch (const sbsrl::BudgetExceeded& e) {
    return fail(SBSRL_E_BUDGET, e.what());
  } catch (const sbsrl::DomainError& e) {
    return fail(SBSRL_E_INPUT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(SBSRL_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SBSRL_E_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(SBSRL_E_RUNTIME, e.what());
  } catch (...) {
    return fail(SBSRL_E_RUNTIME, "unknown error");
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw sbsrl::InputError(msg);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

sbsrl::KernelSpec to_kernel(const sbsrl_kernel* k) {
  require(k != nullptr, "kernel is NULL");
  require(k->lengthscales != nullptr && k->input_dim > 0, "kernel needs lengthscales");
  sbsrl::KernelSpec spec;
  switch (k->kind) {
    case SBSRL_KERNEL_SE: spec.kind = sbsrl::KernelKind::SquaredExponential; break;
    case SBSRL_KERNEL_LINEAR: spec.kind = sbsrl::KernelKind::Linear; break;
    case SBSRL_KERNEL_MATERN52: spec.kind = sbsrl::KernelKind::Matern52; break;
    default: throw sbsrl::InputError("unknown kernel kind");
  }
  spec.lengthscales = Eigen::Map<const sbsrl::Vec>(k->lengthscales,
                                                   static_cast<Eigen::Index>(k->input_dim));
  spec.signal_variance = k->variance;
  spec.validate();
  return spec;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

extern "C" {

const char* sbsrl_last_error(void) { return g_last_error.c_str(); }
const char* sbsrl_version(void) { return sbsrl::kVersion; }

const char* sbsrl_status_name(sbsrl_status status) {
  switch (status) {
    case SBSRL_OK: return "ok";
    case SBSRL_E_INPUT: return "input error";
    case SBSRL_E_NUMERICAL: return "numerical error";
    case SBSRL_E_CONFIG: return "config error";
    case SBSRL_E_RUNTIME: return "runtime error";
    case SBSRL_E_BUDGET: return "wall-clock budget exceeded";
    case SBSRL_E_IO: return "i/o error";
  }
  return "unknown status";
}

void sbsrl_string_free(char* s) { std::free(s); }

sbsrl_status sbsrl_gp_fit(const sbsrl_kernel* kernel, size_t output_dim, double rkhs_bound,
                          double noise_std, const double* inputs, const double* targets, size_t n,
                          sbsrl_gp** out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    require(output_dim > 0, "output_dim must be positive");
    require(n == 0 || (inputs && targets), "data pointers are NULL");
    const sbsrl::KernelSpec spec = to_kernel(kernel);
    sbsrl::PriorSpec prior{sbsrl::MeanFunction::zero(output_dim), rkhs_bound, noise_std};
    prior.validate();
    const auto rows = static_cast<Eigen::Index>(n);
    const auto in_dim = static_cast<Eigen::Index>(spec.input_dim());
    const auto out_dim = static_cast<Eigen::Index>(output_dim);
    sbsrl::Mat z = n ? sbsrl::Mat(Eigen::Map<const RowMat>(inputs, rows, in_dim))
                     : sbsrl::Mat(0, in_dim);
    sbsrl::Mat y = n ? sbsrl::Mat(Eigen::Map<const RowMat>(targets, rows, out_dim))
                     : sbsrl::Mat(0, out_dim);
    auto handle = std::make_unique<sbsrl_gp>();
    handle->post = std::make_shared<const sbsrl::GpPosterior>(
        n ? sbsrl::GpPosterior::fit(prior, spec, z, y) : sbsrl::GpPosterior(prior, spec));
    *out = handle.release();
  });
}

sbsrl_status sbsrl_gp_predict(const sbsrl_gp* gp, const double* queries, size_t n, double* mean,
                              double* stddev) {
  return guarded([&] {
    require(gp != nullptr, "gp is NULL");
    if (n == 0) return;
    require(queries && mean && stddev, "NULL buffer");
    const auto rows = static_cast<Eigen::Index>(n);
    const auto in_dim = static_cast<Eigen::Index>(gp->post->input_dim());
    const auto out_dim = static_cast<Eigen::Index>(gp->post->output_dim());
    const sbsrl::Mat q = Eigen::Map<const RowMat>(queries, rows, in_dim);
    const sbsrl::Prediction p = gp->post->predict(q);
    Eigen::Map<RowMat>(mean, rows, out_dim) = p.mean;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < out_dim; ++j) stddev[i * out_dim + j] = p.stddev(i);
    }
  });
}

sbsrl_status sbsrl_gp_info_gain(const sbsrl_gp* gp, double* out) {
  return guarded([&] {
    require(gp && out, "NULL argument");
    *out = gp->post->information_gain();
  });
}

size_t sbsrl_gp_size(const sbsrl_gp* gp) { return gp ? gp->post->size() : 0; }
void sbsrl_gp_free(sbsrl_gp* gp) { delete gp; }

sbsrl_status sbsrl_sample_budget(double delta, double exponent, int64_t cap, int64_t* m_out) {
  return guarded([&] {
    require(m_out != nullptr, "m_out is NULL");
    *m_out = sbsrl::sample_budget_from_exponent(delta, exponent, cap).m;
  });
}

sbsrl_status sbsrl_small_ball_exponent(const sbsrl_kernel* kernel, double zeta, size_t n_draws,
                                       size_t n_grid, uint64_t seed, double* out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    sbsrl::SmallBallConfig sb;
    if (n_draws) sb.n_draws = n_draws;
    if (n_grid) sb.n_grid = n_grid;
    sb.seed = seed;
    *out = sbsrl::small_ball_exponent(to_kernel(kernel), zeta, sb);
  });
}

sbsrl_status sbsrl_beta(double rkhs_bound, double noise_std, double delta, double gamma, int d_x,
                        double* out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    sbsrl::PriorSpec prior{sbsrl::MeanFunction::zero(1), rkhs_bound, noise_std};
    prior.validate();
    *out = sbsrl::beta(0, 0, prior, delta, gamma, d_x);
  });
}

sbsrl_status sbsrl_tightening(double zeta, int d_x, int horizon, double c_max, double noise_std,
                              double* out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    *out = sbsrl::tightening_delta(zeta, d_x, horizon, c_max, noise_std);
  });
}

sbsrl_status sbsrl_exploration_threshold(double epsilon, double noise_std, double g_max,
                                         int horizon, double beta_n, double* out) {
  return guarded([&] {
    require(out != nullptr, "out is NULL");
    *out = sbsrl::exploration_threshold(epsilon, noise_std, g_max, horizon, beta_n);
  });
}

void sbsrl_budget_args_init(sbsrl_budget_args* args) {
  if (!args) return;
  const sbsrl::SmallBallConfig sb;
  *args = sbsrl_budget_args{0.1, 0.1, 1.0, 1, 1.0, 1.0, sb.n_draws, sb.n_grid, 0, 0.0};
}

sbsrl_status sbsrl_budget_report(const sbsrl_budget_args* args, int as_json, char** out) {
  return guarded([&] {
    require(args && out, "NULL argument");
    sbsrl::BudgetRequest req;
    req.delta = args->delta;
    req.zeta = args->zeta;
    req.rkhs_bound = args->rkhs_bound;
    req.d_x = args->d_x;
    require(args->d_x >= 1, "d_x must be >= 1");
    req.kernel = sbsrl::KernelSpec::isotropic(sbsrl::KernelKind::SquaredExponential,
                                              static_cast<std::size_t>(args->d_x),
                                              args->lengthscale, args->variance);
    if (args->n_draws) req.small_ball.n_draws = args->n_draws;
    if (args->n_grid) req.small_ball.n_grid = args->n_grid;
    if (args->use_exponent) req.exponent_override = args->exponent;
    const sbsrl::BudgetReport rep = sbsrl::cmd_budget(req);
    *out = dup_string(as_json ? sbsrl::budget_json(rep) : sbsrl::budget_text(rep));
  });
}

sbsrl_status sbsrl_experiment_load(const char* config_path, sbsrl_experiment** out) {
  return guarded([&] {
    require(config_path && out, "NULL argument");
    auto ex = std::make_unique<sbsrl_experiment>();
    ex->cfg = sbsrl::load_experiment_config(config_path);
    *out = ex.release();
  });
}

sbsrl_status sbsrl_experiment_parse(const char* config_text, sbsrl_experiment** out) {
  return guarded([&] {
    require(config_text && out, "NULL argument");
    auto ex = std::make_unique<sbsrl_experiment>();
    ex->cfg = sbsrl::parse_experiment_config(config_text);
    *out = ex.release();
  });
}

sbsrl_status sbsrl_experiment_set_seeds(sbsrl_experiment* ex, const char* seeds) {
  return guarded([&] {
    require(ex && seeds, "NULL argument");
    sbsrl::RunOverrides ov;
    ov.seeds = sbsrl::parse_seed_list(seeds);
    sbsrl::apply_overrides(ex->cfg, ov);
  });
}

sbsrl_status sbsrl_experiment_set_master_seed(sbsrl_experiment* ex, uint64_t seed) {
  return guarded([&] {
    require(ex != nullptr, "experiment is NULL");
    ex->cfg.master_seed = seed;
  });
}

sbsrl_status sbsrl_experiment_set_parallelism(sbsrl_experiment* ex, int workers) {
  return guarded([&] {
    require(ex != nullptr, "experiment is NULL");
    sbsrl::RunOverrides ov;
    ov.parallelism = workers;
    sbsrl::apply_overrides(ex->cfg, ov);
  });
}

sbsrl_status sbsrl_experiment_set_time_budget(sbsrl_experiment* ex, double seconds) {
  return guarded([&] {
    require(ex != nullptr, "experiment is NULL");
    sbsrl::RunOverrides ov;
    ov.wall_clock_budget_s = seconds;
    sbsrl::apply_overrides(ex->cfg, ov);
  });
}

sbsrl_status sbsrl_experiment_run(sbsrl_experiment* ex, const char* out_dir) {
  return guarded([&] {
    require(ex && out_dir, "NULL argument");
    ex->summary.clear();
    // cmd_run rethrows after writing; keep the summary either way.
    try {
      const auto out = sbsrl::cmd_run(ex->cfg, out_dir);
      ex->summary = sbsrl::run_summary_json(out);
    } catch (...) {
      std::ifstream in(std::filesystem::path(out_dir) / "summary.json");
      std::ostringstream ss;
      ss << in.rdbuf();
      ex->summary = ss.str();
      throw;
    }
  });
}

sbsrl_status sbsrl_experiment_summary(const sbsrl_experiment* ex, char** out) {
  return guarded([&] {
    require(ex && out, "NULL argument");
    *out = dup_string(ex->summary);
  });
}

void sbsrl_experiment_free(sbsrl_experiment* ex) { delete ex; }

void sbsrl_compare_args_init(sbsrl_compare_args* args) {
  if (!args) return;
  *args = sbsrl_compare_args{nullptr, 0, 1, nullptr, 0, nullptr, 0, 0, 0, -1.0};
}

sbsrl_status sbsrl_compare(const sbsrl_compare_args* args, const char* out_dir) {
  return guarded([&] {
    require(args && out_dir, "NULL argument");
    require(args->n_configs > 0 && args->config_paths, "compare needs at least one config");
    require(args->n_ablation == 0 || args->ablation, "ablation list is NULL");
    std::vector<std::string> paths;
    for (size_t i = 0; i < args->n_configs; ++i) {
      require(args->config_paths[i] != nullptr, "config path is NULL");
      paths.emplace_back(args->config_paths[i]);
    }
    sbsrl::CompareOptions opt;
    opt.baseline = args->baseline != 0;
    opt.ablation.assign(args->ablation, args->ablation + args->n_ablation);
    if (args->seeds) opt.overrides.seeds = sbsrl::parse_seed_list(args->seeds);
    if (args->has_master_seed) opt.overrides.master_seed = args->master_seed;
    if (args->parallelism > 0) opt.overrides.parallelism = args->parallelism;
    if (args->time_budget_s >= 0.0) opt.overrides.wall_clock_budget_s = args->time_budget_s;
    sbsrl::cmd_compare(paths, opt, out_dir);
  });
}

sbsrl_status sbsrl_plot(const char* csv_path, const char* kind, const char* out_dir,
                        double budget_d) {
  return guarded([&] {
    require(csv_path && kind && out_dir, "NULL argument");
    sbsrl::PlotKind k;
    try {
      k = sbsrl::parse_plot_kind(kind);
    } catch (const sbsrl::InputError& e) {
      throw sbsrl::ConfigError(e.what());
    }
    std::optional<double> d;
    if (budget_d > 0.0) d = budget_d;
    sbsrl::cmd_plot(csv_path, k, out_dir, d);
  });
}

}  // extern "C"
