#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace ld {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a path of indices,
/// e.g. (seed, trial, step). Used wherever parallel and sequential execution
/// must draw identical numbers.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

/// 64-bit FNV-1a; stable across platforms, used to turn names into seeds.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(seed, path));
}

/// Uniform double in [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace ld
