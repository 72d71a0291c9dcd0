#pragma once

#include <cmath>
#include <cstdint>

namespace traceprune {

// SplitMix64 (Steele, Lea & Flood 2014). Used for all stochastic choices in
// the library: parameter init, batch-offset sampling, dropout masks and trace
// weight selection. Chosen over std::mt19937 + std:: distributions because its
// output is fully specified by these few lines, so streams are identical on
// every platform and can be re-derived from (seed, counter) without storing
// generator state in checkpoints.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53 random bits, exact on all IEEE-754 doubles.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). Multiply-shift reduction (Lemire 2019)
    // without the rejection step; the bias is < bound/2^64 and irrelevant
    // here, while the result stays a pure function of the stream.
    uint64_t below(uint64_t bound) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next()) * bound) >> 64);
    }

    // Standard normal via Box-Muller. One fresh pair of draws per sample; the
    // spare cosine branch is deliberately not cached so the mapping from
    // stream position to sample stays stateless.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // clamp away from 0 so log() stays finite
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

// Derives an independent stream from a base seed and a stream index. Feeding
// the mixed value through SplitMix64 decorrelates consecutive indices.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    SplitMix64 m(seed ^ (0x632be59bd9b4e019ull * (stream + 1)));
    return m.next();
}

}  // namespace traceprune
