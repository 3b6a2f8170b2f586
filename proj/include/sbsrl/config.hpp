#pragma once

#include "sbsrl/loop.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sbsrl {

// Flat `section.key = value` text, one entry per line, `#` starts a comment.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, std::string origin);

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  // Typed getters mark the key as used and throw ConfigError on bad values.
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::int64_t get_int(const std::string& key, std::int64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  Vec get_vec(const std::string& key, const Vec& fallback);
  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          const std::vector<std::uint64_t>& fallback);
  // Throws ConfigError naming the first key no getter asked for.
  void reject_unused() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
  };
  const Entry* take(const std::string& key);
  [[noreturn]] void bad(const std::string& key, const Entry& e, const std::string& what) const;

  std::string origin_;
  std::map<std::string, Entry> entries_;
};

struct ExperimentConfig {
  std::string name = "experiment";
  RunConfig run;
  std::vector<std::uint64_t> seeds{1};
  std::uint64_t master_seed = 0;
  int parallelism = 1;
  double wall_clock_budget_s = 0.0;  // 0 disables the limit
};

ExperimentConfig parse_experiment_config(std::string_view text, std::string_view origin = "<text>");
ExperimentConfig load_experiment_config(const std::string& path);

// "1,2,5" or "1-5" or a mix.
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

// Seed of the loop for one labelled run.
std::uint64_t run_seed(std::uint64_t master_seed, std::uint64_t seed_label);

}  // namespace sbsrl
