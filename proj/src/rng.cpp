#include "mmvs/rng.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace mmvs {

Rng MakeRng(uint64_t seed, std::initializer_list<uint64_t> stream_ids) {
  std::vector<uint32_t> words;
  words.push_back(static_cast<uint32_t>(seed));
  words.push_back(static_cast<uint32_t>(seed >> 32));
  for (uint64_t id : stream_ids) {
    words.push_back(static_cast<uint32_t>(id));
    words.push_back(static_cast<uint32_t>(id >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

double Uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double UniformRange(Rng& rng, double lo, double hi) { return lo + (hi - lo) * Uniform01(rng); }

double StandardNormal(Rng& rng) {
  double u1 = Uniform01(rng);
  while (u1 <= 0.0) u1 = Uniform01(rng);
  const double u2 = Uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t UniformIndex(Rng& rng, uint64_t n) {
  // Rejection sampling keeps the result unbiased.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t r = rng();
  while (r >= limit) r = rng();
  return r % n;
}

}  // namespace mmvs
