#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace patchdef {

/// splitmix64 — used to derive independent per-item seeds from a master seed.
inline uint64_t mix_seed(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(a ^ mix_seed(b)); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b) ^ mix_seed(c));
}

using Rng = std::mt19937_64;

inline std::string rng_state_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_state_from_string(Rng& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
}

inline float uniform(Rng& rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

inline float normal(Rng& rng, float mean, float stddev) {
  return std::normal_distribution<float>(mean, stddev)(rng);
}

}  // namespace patchdef
