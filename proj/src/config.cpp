#include "sbsrl/config.hpp"

#include "sbsrl/error.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace sbsrl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  in >> out;
  return !in.fail() && in.eof();
}

bool to_u64(const std::string& s, std::uint64_t& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

}  // namespace

KeyValueFile KeyValueFile::parse(std::string_view text, std::string origin) {
  KeyValueFile f;
  f.origin_ = std::move(origin);
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? nl : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = f.origin_ + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (f.entries_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    f.entries_[key] = Entry{value, line_no, false};
  }
  return f;
}

const KeyValueFile::Entry* KeyValueFile::take(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

void KeyValueFile::bad(const std::string& key, const Entry& e, const std::string& what) const {
  throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": '" + key + "' " + what +
                    " (got '" + e.value + "')");
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) {
  const Entry* e = take(key);
  return e ? e->value : fallback;
}

double KeyValueFile::get_double(const std::string& key, double fallback) {
  const Entry* e = take(key);
  if (!e) return fallback;
  double v = 0.0;
  if (!to_double(e->value, v)) bad(key, *e, "must be a number");
  return v;
}

std::int64_t KeyValueFile::get_int(const std::string& key, std::int64_t fallback) {
  const Entry* e = take(key);
  if (!e) return fallback;
  std::int64_t v = 0;
  const auto* end = e->value.data() + e->value.size();
  auto [p, ec] = std::from_chars(e->value.data(), end, v);
  if (ec != std::errc() || p != end) bad(key, *e, "must be an integer");
  return v;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) {
  const Entry* e = take(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  bad(key, *e, "must be true or false");
}

Vec KeyValueFile::get_vec(const std::string& key, const Vec& fallback) {
  const Entry* e = take(key);
  if (!e) return fallback;
  const auto parts = split(e->value, ',');
  Vec v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!to_double(parts[i], v(static_cast<Eigen::Index>(i)))) {
      bad(key, *e, "must be a comma-separated list of numbers");
    }
  }
  return v;
}

std::vector<std::uint64_t> KeyValueFile::get_u64_list(const std::string& key,
                                                      const std::vector<std::uint64_t>& fallback) {
  const Entry* e = take(key);
  if (!e) return fallback;
  try {
    return parse_seed_list(e->value);
  } catch (const ConfigError&) {
    bad(key, *e, "must be a list of nonnegative integers");
  }
}

void KeyValueFile::reject_unused() const {
  for (const auto& [key, e] : entries_) {
    if (!e.used) {
      throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": unknown key '" + key + "'");
    }
  }
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    const auto dash = part.find('-');
    std::uint64_t lo = 0, hi = 0;
    if (dash != std::string::npos && dash > 0) {
      if (!to_u64(trim(part.substr(0, dash)), lo) || !to_u64(trim(part.substr(dash + 1)), hi) ||
          hi < lo) {
        throw ConfigError("invalid seed range '" + part + "'");
      }
      for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      if (!to_u64(part, lo)) throw ConfigError("invalid seed '" + part + "'");
      out.push_back(lo);
    }
  }
  std::set<std::uint64_t> seen;
  for (auto s : out) {
    if (!seen.insert(s).second) throw ConfigError("seed list repeats " + std::to_string(s));
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

std::uint64_t run_seed(std::uint64_t master_seed, std::uint64_t seed_label) {
  return derive_seed(master_seed, "run", seed_label);
}

namespace {

void read_icem(KeyValueFile& f, const std::string& prefix, IcemParams& p) {
  p.population = static_cast<int>(f.get_int(prefix + ".population", p.population));
  p.elite_fraction = f.get_double(prefix + ".elite_fraction", p.elite_fraction);
  p.iterations = static_cast<int>(f.get_int(prefix + ".iterations", p.iterations));
  p.init_std = f.get_double(prefix + ".init_std", p.init_std);
  p.noise_exponent = f.get_double(prefix + ".noise_exponent", p.noise_exponent);
  p.shift_elites = f.get_bool(prefix + ".shift_elites", p.shift_elites);
  p.keep_fraction = f.get_double(prefix + ".keep_fraction", p.keep_fraction);
  p.momentum = f.get_double(prefix + ".momentum", p.momentum);
  p.min_std = f.get_double(prefix + ".min_std", p.min_std);
}

void read_physics(KeyValueFile& f, const std::string& prefix, PhysicalParams& p) {
  p.mass = f.get_double(prefix + ".mass", p.mass);
  p.length = f.get_double(prefix + ".length", p.length);
  p.gravity = f.get_double(prefix + ".gravity", p.gravity);
  p.cart_mass = f.get_double(prefix + ".cart_mass", p.cart_mass);
}

template <typename Fn>
auto enum_value(KeyValueFile& f, const std::string& key, const std::string& fallback, Fn parse) {
  const std::string v = f.get_string(key, fallback);
  try {
    return parse(v);
  } catch (const InputError& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view text, std::string_view origin) {
  KeyValueFile f = KeyValueFile::parse(text, std::string(origin));
  ExperimentConfig x;
  RunConfig& r = x.run;

  x.name = f.get_string("run.name", x.name);
  x.seeds = f.get_u64_list("run.seeds", x.seeds);
  x.master_seed = static_cast<std::uint64_t>(f.get_int("run.master_seed", 0));
  x.parallelism = static_cast<int>(f.get_int("run.parallelism", x.parallelism));
  x.wall_clock_budget_s = f.get_double("run.wall_clock_budget_s", x.wall_clock_budget_s);
  if (x.parallelism < 1) throw ConfigError("run.parallelism must be >= 1");
  if (x.wall_clock_budget_s < 0.0) throw ConfigError("run.wall_clock_budget_s must be >= 0");

  // Environment: start from the kind's defaults, then override.
  const EnvKind kind = enum_value(f, "env.kind", "pendulum", parse_env_kind);
  KernelSpec kernel;
  kernel.kind = enum_value(f, "kernel.kind", "se", parse_kernel_kind);
  kernel.signal_variance = f.get_double("kernel.variance", 1.0);
  const Vec ls = f.get_vec("kernel.lengthscales", Vec());

  EnvSpec env;
  if (kind == EnvKind::Pendulum) {
    env = EnvSpec::pendulum();
  } else if (kind == EnvKind::Cartpole) {
    env = EnvSpec::cartpole();
  } else {
    const int d_x = static_cast<int>(f.get_int("env.d_x", 1));
    const int d_a = static_cast<int>(f.get_int("env.d_a", 1));
    const int n_centers = static_cast<int>(f.get_int("env.synthetic.centers", 20));
    const double norm = f.get_double("env.synthetic.rkhs_norm", 1.0);
    const auto seed = static_cast<std::uint64_t>(f.get_int("env.synthetic.seed", 1));
    if (d_x < 1 || d_a < 1 || n_centers < 1) {
      throw ConfigError("synthetic env needs d_x, d_a, centers >= 1");
    }
    KernelSpec truth = kernel;
    truth.lengthscales = ls.size() ? ls : Vec::Ones(d_x + d_a);
    try {
      Rng rng(seed);
      auto e = std::make_shared<const KernelExpansion>(KernelExpansion::random(
          truth, static_cast<std::size_t>(n_centers), static_cast<std::size_t>(d_x), norm, -1.0,
          1.0, rng));
      env = EnvSpec::synthetic(std::move(e), d_x, d_a, 10, 0.1);
    } catch (const InputError& err) {
      throw ConfigError(std::string("synthetic env: ") + err.what());
    }
  }
  env.horizon = static_cast<int>(f.get_int("env.horizon", env.horizon));
  env.noise_std = f.get_double("env.noise_std", env.noise_std);
  env.cost_budget = f.get_double("env.cost_budget", env.cost_budget);
  env.phys.dt = f.get_double("env.dt", env.phys.dt);
  env.phys.substeps = static_cast<int>(f.get_int("env.substeps", env.phys.substeps));
  read_physics(f, "env", env.phys);
  env.action_lo = f.get_vec("env.action_low", env.action_lo);
  env.action_hi = f.get_vec("env.action_high", env.action_hi);
  env.state_bound = f.get_vec("env.state_bound", env.state_bound);
  env.init_mean = f.get_vec("env.init_mean", env.init_mean);
  env.init_std = f.get_vec("env.init_std", env.init_std);
  env.theta_target = f.get_double("env.theta_target", env.theta_target);
  env.r_max = f.get_double("env.r_max", env.r_max);
  if (kind == EnvKind::SyntheticRkhs) {
    env.synthetic_reward = f.get_double("env.synthetic.reward", env.synthetic_reward);
    env.synthetic_cost = f.get_double("env.synthetic.cost", env.synthetic_cost);
  }
  r.env = env;

  r.nominal_prior = f.get_bool("nominal.enabled", kind != EnvKind::SyntheticRkhs);
  r.nominal = env;
  read_physics(f, "nominal", r.nominal.phys);

  kernel.lengthscales = ls.size() ? ls : Vec::Ones(static_cast<Eigen::Index>(encoded_dim(env)));
  r.kernel = kernel;
  r.rkhs_bound = f.get_double("prior.rkhs_bound", r.rkhs_bound);

  r.delta = f.get_double("theory.delta", r.delta);
  r.zeta = f.get_double("theory.zeta", r.zeta);
  r.epsilon = f.get_double("theory.epsilon", r.epsilon);
  r.beta_scale = f.get_double("theory.beta_scale", r.beta_scale);
  if (f.has("theory.warm_margin")) r.warm_margin = f.get_double("theory.warm_margin", 0.0);

  const std::string count = f.get_string("samples.count", std::to_string(r.n_samples));
  if (count == "auto") {
    r.n_samples = 0;
  } else {
    std::int64_t v = 0;
    const auto* end = count.data() + count.size();
    auto [p, ec] = std::from_chars(count.data(), end, v);
    if (ec != std::errc() || p != end || v < 1) {
      throw ConfigError("samples.count must be 'auto' or a positive integer (got '" + count + "')");
    }
    r.n_samples = static_cast<int>(v);
  }
  r.sample_cap = f.get_int("samples.cap", r.sample_cap);
  r.sample_kind = enum_value(f, "samples.kind", std::string(to_string(r.sample_kind)),
                             parse_sample_kind);
  r.n_features = static_cast<std::size_t>(
      f.get_int("samples.features", static_cast<std::int64_t>(r.n_features)));
  r.resample_each_episode = f.get_bool("samples.resample", r.resample_each_episode);
  r.small_ball.n_draws = static_cast<std::size_t>(
      f.get_int("samples.small_ball_draws", static_cast<std::int64_t>(r.small_ball.n_draws)));
  r.small_ball.n_grid = static_cast<std::size_t>(
      f.get_int("samples.small_ball_grid", static_cast<std::int64_t>(r.small_ball.n_grid)));

  r.kind = enum_value(f, "loop.kind", std::string(to_string(r.kind)), parse_run_kind);
  r.max_episodes = static_cast<int>(f.get_int("loop.max_episodes", r.max_episodes));
  r.dsigma_mode =
      enum_value(f, "loop.dsigma_mode", std::string(to_string(r.dsigma_mode)), parse_dsigma_mode);
  r.dsigma_value = f.get_double("loop.dsigma_value", r.dsigma_value);
  const std::string on_inf = f.get_string("loop.on_infeasible", "terminate");
  if (on_inf != "terminate" && on_inf != "relax") {
    throw ConfigError("loop.on_infeasible must be 'terminate' or 'relax' (got '" + on_inf + "')");
  }
  r.terminate_on_infeasible = on_inf == "terminate";
  r.points_per_episode = static_cast<int>(f.get_int("loop.points_per_episode", r.points_per_episode));
  r.eval_rollouts = static_cast<int>(f.get_int("loop.eval_rollouts", r.eval_rollouts));
  r.replan_every = static_cast<int>(f.get_int("loop.replan_every", r.replan_every));
  r.certify_rollouts = static_cast<int>(f.get_int("loop.certify_rollouts", r.certify_rollouts));
  r.certify_steps = static_cast<int>(f.get_int("loop.certify_steps", r.certify_steps));
  r.record_wall_time = f.get_bool("loop.record_wall_time", r.record_wall_time);

  r.warm_gains.kp = f.get_double("warm.kp", r.warm_gains.kp);
  r.warm_gains.kd = f.get_double("warm.kd", r.warm_gains.kd);
  r.warm_rollouts = static_cast<int>(f.get_int("warm.rollouts", r.warm_rollouts));
  r.warm_action_noise = f.get_double("warm.action_noise", r.warm_action_noise);
  r.check_warm_start = f.get_bool("warm.check", r.check_warm_start);

  read_icem(f, "planner", r.icem);
  r.probe_icem = r.icem;
  read_icem(f, "probe", r.probe_icem);

  r.mc.n_mean = static_cast<int>(f.get_int("mc.n_mean", r.mc.n_mean));
  r.mc.n_cost = static_cast<int>(f.get_int("mc.n_cost", r.mc.n_cost));
  r.mc.mode = enum_value(f, "mc.mode", std::string(to_string(r.mc.mode)), parse_rollout_mode);
  r.mc.metric =
      enum_value(f, "mc.metric", std::string(to_string(r.mc.metric)), parse_uncertainty_metric);

  r.lambda_c = f.get_double("penalty.lambda_c", r.lambda_c);
  r.lambda_sigma = f.get_double("penalty.lambda_sigma", r.lambda_sigma);
  r.feasibility_tol = f.get_double("penalty.feasibility_tol", r.feasibility_tol);

  f.reject_unused();
  r.validate();
  return x;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path);
}

}  // namespace sbsrl
