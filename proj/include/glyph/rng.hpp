#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace glyph::rng {

/// Splitmix-style 64-bit generator. Chosen over std::mt19937 because the
/// output stream is fully specified here, so seeded poisoned batches are
/// reproducible across compilers and standard libraries.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, bound). bound must be > 0.
    uint64_t below(uint64_t bound) {
        // Multiply-shift reduction; bias is negligible for desk-scale bounds.
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next()) * bound) >> 64);
    }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call and
    /// discards the second branch so the stream position stays predictable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    uint64_t state_;
};

/// FNV-1a hash of a component tag, used for per-component seed derivation.
inline uint64_t hash_tag(std::string_view tag) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Derives a component-local seed from the global seed: seed XOR tag hash,
/// scrambled once so nearby global seeds do not produce related streams.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view component_tag) {
    SplitMix64 mix(global_seed ^ hash_tag(component_tag));
    return mix.next();
}

}  // namespace glyph::rng
