#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace advkit {

// splitmix64: used to derive independent stream seeds from (seed, stream, element).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (b + 0x7f4a7c159e3779b9ULL));
    return h;
}

// Per-sample stream: same bits whether samples are processed serially or in parallel.
inline std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t sample) {
    return std::mt19937_64(mix_seed(seed, stream, sample));
}

// Fixed mappings instead of std::*_distribution so results do not depend on the
// standard library implementation.
inline double unit_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
T uniform_in(std::mt19937_64& rng, T lo, T hi) {
    return static_cast<T>(lo + (hi - lo) * static_cast<T>(unit_double(rng)));
}

// +mag or -mag with probability 1/2 each.
template <typename T>
T bernoulli_pm(std::mt19937_64& rng, T mag) {
    return (rng() >> 63) ? mag : -mag;
}

// Box-Muller; one value per call (the second root is discarded for simplicity).
template <typename T>
T gaussian(std::mt19937_64& rng) {
    double u1 = unit_double(rng);
    double u2 = unit_double(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return static_cast<T>(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
}

} // namespace advkit
