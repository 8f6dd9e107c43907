#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

// Portable uniform draws on top of std::mt19937_64. The std::uniform_*
// distributions are implementation-defined, which would break byte-identical
// reruns across standard libraries; these mappers are pinned bit-for-bit.
namespace dsnet {

// uniform double in [0, 1), 53 random bits
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// uniform double in [lo, hi)
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// uniform integer in [0, n), n > 0; rejection sampling, no modulo bias
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// 64-bit finalizer (splitmix64): decorrelates nearby seeds so per-item
// generators seeded with (base + index) are independent
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// in-place Fisher-Yates shuffle
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace dsnet
