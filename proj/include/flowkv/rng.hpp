#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace flowkv {

// SplitMix64 finalizer. All seeded randomness in the engine is derived from
// this function so that streams are reproducible across platforms.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// Counter-based draw: the i-th value of stream `seed` is
// mix64(seed + (i + 1) * kGoldenGamma).
constexpr std::uint64_t counter_draw(std::uint64_t seed, std::uint64_t counter) noexcept {
    return mix64(seed + (counter + 1) * kGoldenGamma);
}

// Derives an independent stream seed from a parent seed and a label.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t label) noexcept {
    return mix64(parent ^ mix64(label + kGoldenGamma));
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential wrapper over counter_draw. Satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) noexcept : seed_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return counter_draw(seed_, counter_++); }

    double uniform() noexcept { return to_unit((*this)()); }

    // Uniform integer in [0, bound). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return x % bound;
    }

    // Box-Muller; the second variate is discarded so the stream position is
    // a simple function of the number of calls.
    double gaussian() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace flowkv
