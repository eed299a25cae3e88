#pragma once

// Radio cost model: placements in a disc, Rayleigh-faded gains, OFDMA delay,
// minimum-power transmission and per-device feasibility.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "soldfl/error.hpp"
#include "soldfl/rng.hpp"

namespace soldfl {

struct RadioConfig {
    double bandwidth_hz = 1e6;
    double noise_variance = 1e-10;  // W
    double delay_cap_s = 5.0;
    double power_cap_w = 1.0;
    std::uint32_t bits_per_parameter = 32;
    double region_radius_m = 100.0;

    void validate() const {
        if (!(bandwidth_hz > 0.0)) throw ConfigError("radio.bandwidth_hz", "must be > 0");
        if (!(noise_variance > 0.0)) throw ConfigError("radio.noise_variance", "must be > 0");
        if (!(delay_cap_s > 0.0)) throw ConfigError("radio.delay_cap_s", "must be > 0");
        if (!(power_cap_w >= 0.0)) throw ConfigError("radio.power_cap_w", "must be >= 0");
        if (bits_per_parameter == 0) throw ConfigError("radio.bits_per_parameter", "must be > 0");
        if (!(region_radius_m > 0.0)) throw ConfigError("radio.region_radius_m", "must be > 0");
    }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline constexpr double kMinDistanceM = 1.0;

class DevicePlacement {
public:
    DevicePlacement() = default;
    DevicePlacement(std::vector<Point> positions, std::uint64_t fading_seed)
        : positions_(std::move(positions)), fading_seed_(fading_seed) {}

    /// Positions uniform over a disc of the given radius.
    static DevicePlacement uniform_disc(std::size_t devices, double radius, std::uint64_t seed) {
        Rng rng(derive_seed(seed, "placement"));
        std::vector<Point> pts;
        for (std::size_t i = 0; i < devices; ++i) {
            const double rad = radius * std::sqrt(rng.uniform());
            const double theta = 2.0 * std::numbers::pi * rng.uniform();
            pts.push_back({rad * std::cos(theta), rad * std::sin(theta)});
        }
        return DevicePlacement(std::move(pts), derive_seed(seed, "fading"));
    }

    std::size_t size() const noexcept { return positions_.size(); }
    const std::vector<Point>& positions() const noexcept { return positions_; }

    /// Euclidean distance floored at 1 m.
    double distance(std::size_t i, std::size_t j) const {
        const Point& a = positions_.at(i);
        const Point& b = positions_.at(j);
        return std::max(kMinDistanceM, std::hypot(a.x - b.x, a.y - b.y));
    }

    /// ρ ~ Exp(1), one draw per unordered pair per round.
    double fading(std::size_t i, std::size_t j, std::uint64_t round) const {
        const std::uint64_t lo = std::min(i, j), hi = std::max(i, j);
        Rng rng(derive_seed(fading_seed_, "pair", (lo << 32) | hi, round));
        return rng.exponential();
    }

private:
    std::vector<Point> positions_;
    std::uint64_t fading_seed_ = 0;
};

/// h = ρ d⁻² for the unordered pair (i, j) in `round`.
inline double channel_gain(const DevicePlacement& placement, std::size_t i, std::size_t j, std::uint64_t round) {
    if (i == j) throw DomainError("channel_gain: a device has no channel to itself");
    const double d = placement.distance(i, j);
    return placement.fading(i, j, round) / (d * d);
}

inline double channel_gain(double rho, double distance_m) {
    const double d = std::max(kMinDistanceM, distance_m);
    return rho / (d * d);
}

/// Seconds to push q_params over one of `fanout` equal OFDMA sub-bands.
inline double transmission_delay(double q_params, std::size_t fanout, double gain, double power,
                                 const RadioConfig& radio) {
    if (fanout == 0) throw DomainError("transmission_delay: fanout must be >= 1");
    if (!(power >= 0.0)) throw DomainError("transmission_delay: negative power");
    const double bits = q_params * radio.bits_per_parameter;
    if (bits == 0.0) return 0.0;
    const double snr = power * gain / radio.noise_variance;
    const double rate = (radio.bandwidth_hz / static_cast<double>(fanout)) * std::log1p(snr) / std::numbers::ln2;
    if (!(rate > 0.0)) return std::numeric_limits<double>::infinity();
    return bits / rate;
}

/// Smallest power meeting the delay cap exactly: (σ²/h)(2^{Q f / (W Γ)} − 1).
inline double optimal_power(double q_params, std::size_t fanout, double gain, const RadioConfig& radio) {
    if (!(gain > 0.0)) throw DomainError("optimal_power: gain must be > 0");
    if (fanout == 0) throw DomainError("optimal_power: fanout must be >= 1");
    const double exponent = q_params * radio.bits_per_parameter * static_cast<double>(fanout) /
                            (radio.bandwidth_hz * radio.delay_cap_s);
    if (exponent > 1000.0)
        throw InfeasibleError("optimal_power: rate exponent " + std::to_string(exponent) + " exceeds 1000");
    return radio.noise_variance / gain * std::expm1(exponent * std::numbers::ln2);
}

struct LinkReport {
    std::size_t to = 0;
    double gain = 0.0;
    double power = 0.0;
    double delay = 0.0;
    bool delay_ok = true;
};

struct FeasibilityReport {
    bool feasible = true;
    double total_power = 0.0;
    std::vector<LinkReport> links;
    std::vector<std::string> binding;  // human-readable violated constraints
};

/// Relative slack on the delay cap when checking links driven at optimal power.
inline constexpr double kDelaySlack = 1e-9;

/// Device `from` sends q_params to every peer, splitting its band evenly.
inline FeasibilityReport check_feasibility(std::size_t from, std::span<const std::size_t> peers, double q_params,
                                           const DevicePlacement& placement, std::uint64_t round,
                                           const RadioConfig& radio) {
    FeasibilityReport rep;
    if (peers.empty()) return rep;
    const std::size_t fanout = peers.size();
    for (std::size_t to : peers) {
        LinkReport link;
        link.to = to;
        link.gain = channel_gain(placement, from, to, round);
        try {
            link.power = optimal_power(q_params, fanout, link.gain, radio);
        } catch (const InfeasibleError&) {
            link.power = std::numeric_limits<double>::infinity();
        }
        link.delay = std::isfinite(link.power) ? transmission_delay(q_params, fanout, link.gain, link.power, radio)
                                               : std::numeric_limits<double>::infinity();
        link.delay_ok = link.delay <= radio.delay_cap_s * (1.0 + kDelaySlack);
        if (!link.delay_ok) {
            rep.feasible = false;
            rep.binding.push_back("delay cap on link " + std::to_string(from) + "->" + std::to_string(to));
        }
        rep.total_power += link.power;
        rep.links.push_back(link);
    }
    if (!(rep.total_power <= radio.power_cap_w)) {
        rep.feasible = false;
        rep.binding.push_back("power cap at device " + std::to_string(from) + " (needs " +
                              std::to_string(rep.total_power) + " W, cap " + std::to_string(radio.power_cap_w) + " W)");
    }
    return rep;
}

}  // namespace soldfl
