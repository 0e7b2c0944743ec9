#pragma once

#include <cmath>
#include <cstdint>

namespace duoseg {

// PCG32 with an explicit stream. All randomness in the project flows through
// this generator so that runs are reproducible independently of the standard
// library implementation.
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }

    // Uniform in [0, 1), 24 bits of resolution.
    float uniform() { return static_cast<float>(next_u32() >> 8) * 0x1p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n)
    std::uint32_t uniform_int(std::uint32_t n) {
        // Lemire-style rejection-free mapping is biased for huge n; n here is tiny.
        std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * n;
        return static_cast<std::uint32_t>(m >> 32);
    }

    int uniform_range(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(uniform_int(static_cast<std::uint32_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller; evaluated in double, returned as float.
    float normal() {
        double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1p-32;
        double u2 = static_cast<double>(next_u32()) * 0x1p-32;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(2.0 * 3.14159265358979323846 * u2));
    }

    bool bernoulli(float p) { return uniform() < p; }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
};

// SplitMix64 finalizer, used to derive independent keys from (seed, counters).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Counter-based derivation: the generator for (seed, a, b) depends only on
// those values, never on how many draws other generators made.
inline Pcg32 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t key = mix64(seed ^ mix64(a ^ mix64(b)));
    return Pcg32(key, mix64(key));
}

}  // namespace duoseg
