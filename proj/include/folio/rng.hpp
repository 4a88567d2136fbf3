#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace folio {

// splitmix64 finalizer; spreads one master seed into independent stream
// seeds without correlated low bits.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64{mix_seed(seed ^ mix_seed(stream))};
}

// Uniform in [0, 1).  The distribution classes in <random> are
// implementation-defined; raw-bit scaling keeps every platform bit-identical.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform strictly inside (0, 1); safe as a logarithm argument.
inline double uniform01_open(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller standard normal (single-draw form, second value discarded).
inline double standard_normal(std::mt19937_64& rng) {
    const double u1 = uniform01_open(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

// Normal with the tails beyond two standard deviations resampled.
inline double truncated_normal(std::mt19937_64& rng, double stddev) {
    double z = standard_normal(rng);
    while (std::abs(z) > 2.0) z = standard_normal(rng);
    return z * stddev;
}

}  // namespace folio
