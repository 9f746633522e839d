#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace netfact {

// Deterministic seed derivation. Every random stream in the library is seeded
// through derive_seed(base, salt...) so that runs are reproducible and
// sub-streams (per subject, per fold, per tree, ...) are independent of
// evaluation order and thread count.

namespace detail {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a over the tag bytes.
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline void absorb(std::uint64_t& state, std::uint64_t salt) {
    state = mix64(state ^ mix64(salt));
}

inline void absorb(std::uint64_t& state, std::string_view salt) {
    absorb(state, hash_tag(salt));
}

}  // namespace detail

template <typename... Salts>
std::uint64_t derive_seed(std::uint64_t base, const Salts&... salts) {
    std::uint64_t state = detail::mix64(base);
    (detail::absorb(state, salts), ...);
    return state;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Laplace(0, scale) via inverse CDF. scale is the distribution's b parameter
// (variance 2 b^2).
inline double draw_laplace(Rng& rng, double scale) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng) - 0.5;
    double m = std::abs(u);
    if (m >= 0.5) m = 0.5 - 1e-16;  // keep log argument positive
    double x = -scale * std::log1p(-2.0 * m);
    return u < 0.0 ? -x : x;
}

inline double draw_normal(Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return stddev * dist(rng);
}

inline double draw_uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

}  // namespace netfact
