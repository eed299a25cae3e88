#pragma once

// Deterministic random streams.
//
// Generator: xoshiro256** 1.0 (Blackman & Vigna), state seeded from a 64-bit
// key through splitmix64. Uniform doubles take the top 53 bits. Normal draws
// use the Box-Muller transform and consume two uniforms per pair of outputs.
// All derived seeds come from derive_seed(), which folds the root seed, an
// FNV-1a hash of a module tag, a device id and a round index through
// splitmix64. Ports that reproduce these three pieces reproduce every stream.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace soldfl {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Key derivation: root seed + module tag + device id + round -> stream seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                           std::uint64_t device = 0,
                                           std::uint64_t round = 0) noexcept {
    std::uint64_t s = root;
    std::uint64_t out = splitmix64(s);
    s = out ^ fnv1a64(tag);
    out = splitmix64(s);
    s = out ^ (device * 0xd1b54a32d192ed03ULL);
    out = splitmix64(s);
    s = out ^ (round * 0x8cb92ba72f3d8dd7ULL);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift with rejection keeps the draw unbiased.
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>(next_u64()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Standard normal via Box-Muller.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Uniform in the open interval (0, 1).
    double uniform_open() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Exponential with unit rate (power of a unit-variance Rayleigh envelope), always > 0.
    double exponential() noexcept { return -std::log(uniform_open()); }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace soldfl
