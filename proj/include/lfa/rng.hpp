#pragma once

// Seeded randomness helpers. std::mt19937_64 is bit-portable across
// platforms; the distributions in <random> are not, so draws that must
// reproduce byte-identically go through these helpers instead.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace lfa {

// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform index in [0, n). n must be > 0.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    return rng() % n;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * u01(rng);
}

// Standard normal via Box-Muller (deterministic draw order, no cached spare).
inline double normal(std::mt19937_64& rng) {
    double u1 = u01(rng);
    double u2 = u01(rng);
    while (u1 <= 0.0) u1 = u01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// In-place Fisher-Yates shuffle with the portable index helper.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace lfa
