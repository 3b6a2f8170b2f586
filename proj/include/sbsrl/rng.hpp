#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sbsrl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Child stream seed for (purpose, episode, index). Any episode or candidate
// can be replayed from the master seed alone.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t episode = 0, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(master ^ tag_hash(purpose));
  s = splitmix64(s ^ episode);
  s = splitmix64(s ^ (index * 0xd1342543de82ef95ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::string_view purpose,
                    std::uint64_t episode = 0, std::uint64_t index = 0) {
  return Rng(derive_seed(master, purpose, episode, index));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace sbsrl
