#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mira/tensor.hpp"

namespace mira {

// Every random draw in the engine comes from a generator keyed by
// (root seed, purpose tag, indices). Stages can then be re-run or resumed
// from a checkpoint and reproduce the exact same streams without
// serializing generator state.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = 1469598103934665603ull ^ root;
    auto mix64 = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    for (char ch : tag) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    mix64(a);
    mix64(b);
    mix64(c);
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
    return std::mt19937_64(derive_seed(root, tag, a, b, c));
}

inline Tensor gaussian_tensor(std::mt19937_64& rng, int rows, int cols, double stddev) {
    Tensor t(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = stddev == 0.0 ? 0.0 : dist(rng);
    return t;
}

inline Tensor uniform_tensor(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
    Tensor t(rows, cols);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

}  // namespace mira
