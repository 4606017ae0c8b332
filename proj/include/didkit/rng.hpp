#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace didkit {

// Independent stream for (seed, counter). Used for bootstrap replications and
// Monte Carlo draws so results do not depend on thread scheduling.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(counter),
                    static_cast<std::uint32_t>(counter >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

// Uniform double in [0, 1) from the top 53 bits; avoids relying on the
// library's distribution implementation.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}


// Box-Muller; consumes two uniforms per draw.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace didkit
