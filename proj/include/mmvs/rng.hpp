#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mmvs {

using Rng = std::mt19937_64;

// Independent stream for (seed, ids...). std::seed_seq is fully specified by
// the standard, so streams are identical across platforms.
Rng MakeRng(uint64_t seed, std::initializer_list<uint64_t> stream_ids = {});

// Uniform in [0, 1) from the top 53 bits.
double Uniform01(Rng& rng);
double UniformRange(Rng& rng, double lo, double hi);
// Standard normal via Box-Muller.
double StandardNormal(Rng& rng);
// Uniform integer in [0, n).
uint64_t UniformIndex(Rng& rng, uint64_t n);

}  // namespace mmvs
