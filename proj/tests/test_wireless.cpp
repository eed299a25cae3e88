#include <gtest/gtest.h>

#include <cmath>

#include "soldfl/wireless.hpp"

using namespace soldfl;

namespace {

RadioConfig radio_with(double w, double noise, double cap_s, double pmax) {
    RadioConfig r;
    r.bandwidth_hz = w;
    r.noise_variance = noise;
    r.delay_cap_s = cap_s;
    r.power_cap_w = pmax;
    return r;
}

// Power that makes (W/f)·log2(1 + p h/σ²) deliver the payload in exactly Γ.
double power_by_inversion(double q, std::size_t f, double h, const RadioConfig& r) {
    const double rate_needed = q * r.bits_per_parameter / r.delay_cap_s;
    const double spectral = rate_needed / (r.bandwidth_hz / static_cast<double>(f));
    return (std::pow(2.0, spectral) - 1.0) * r.noise_variance / h;
}

}  // namespace

TEST(ChannelGain, DirectSubstitution) {
    EXPECT_DOUBLE_EQ(channel_gain(1.0, 10.0), 0.01);
    EXPECT_DOUBLE_EQ(channel_gain(2.0, 0.0), 2.0);
    EXPECT_DOUBLE_EQ(channel_gain(2.0, 0.5), 2.0);
}

TEST(ChannelGain, SymmetricPositiveAndSelfRejected) {
    const auto p = DevicePlacement::uniform_disc(6, 100.0, 3);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_LE(std::hypot(p.positions()[i].x, p.positions()[i].y), 100.0);
        for (std::size_t j = 0; j < 6; ++j) {
            if (i == j) continue;
            for (std::uint64_t round = 1; round <= 3; ++round) {
                EXPECT_GT(channel_gain(p, i, j, round), 0.0);
                EXPECT_EQ(channel_gain(p, i, j, round), channel_gain(p, j, i, round));
            }
        }
    }
    EXPECT_THROW(channel_gain(p, 2, 2, 1), DomainError);
    EXPECT_NE(channel_gain(p, 0, 1, 1), channel_gain(p, 0, 1, 2));
}

TEST(ChannelGain, CoincidentDevicesFlooredAtOneMetre) {
    const DevicePlacement p({{5, 5}, {5, 5}}, 9);
    EXPECT_DOUBLE_EQ(channel_gain(p, 0, 1, 1), p.fading(0, 1, 1));
}

TEST(ChannelGain, DoublingDistanceQuartersMeanGain) {
    const DevicePlacement p({{0, 0}, {10, 0}, {20, 0}}, 17);
    const int n = 10000;
    double near = 0, far = 0;
    for (int round = 1; round <= n; ++round) {
        near += channel_gain(p, 0, 1, round);
        far += channel_gain(p, 0, 2, round);
    }
    // Each mean of Exp(1) draws has relative sd 1/√n; the ratio's is about √2/√n.
    const double ratio = far / near;
    EXPECT_NEAR(ratio, 0.25, 3 * 0.25 * std::sqrt(2.0 / n));
}

TEST(TransmissionDelay, WorkedExample) {
    const RadioConfig r = radio_with(1e6, 1e-10, 5, 1);
    EXPECT_NEAR(transmission_delay(1e5, 2, 1.0, 3e-10, r), 3.2, 1e-12);
}

TEST(TransmissionDelay, ZeroPowerInfiniteAndBandwidthLinear) {
    const RadioConfig r = radio_with(1e6, 1e-10, 5, 1);
    EXPECT_TRUE(std::isinf(transmission_delay(1e5, 1, 1e-4, 0.0, r)));
    const RadioConfig wide = radio_with(2e6, 1e-10, 5, 1);
    EXPECT_DOUBLE_EQ(transmission_delay(1e5, 3, 1e-4, 0.2, wide), transmission_delay(1e5, 3, 1e-4, 0.2, r) / 2);
    EXPECT_EQ(transmission_delay(0, 3, 1e-4, 0.0, r), 0.0);
    EXPECT_THROW(transmission_delay(1, 0, 1, 1, r), DomainError);
}

TEST(OptimalPower, UnitExponentGivesUnitPower) {
    // Q·f/(W·Γ) = 1 with h = σ².
    RadioConfig r = radio_with(1e6, 1e-10, 5, 1);
    r.bits_per_parameter = 1;
    EXPECT_NEAR(optimal_power(5e6, 1, 1e-10, r), 1.0, 1e-12);
    EXPECT_EQ(optimal_power(0, 1, 1e-10, r), 0.0);
    EXPECT_NEAR(optimal_power(1e-6, 1, 1e-10, r), 0.0, 1e-9);
}

TEST(OptimalPower, ExponentOverflowIsInfeasible) {
    const RadioConfig r = radio_with(1, 1e-10, 1, 1);
    EXPECT_THROW(optimal_power(40, 1, 1.0, r), InfeasibleError);
    EXPECT_THROW(optimal_power(1, 1, 0.0, r), DomainError);
}

TEST(OptimalPower, RoundTripAndMonotone) {
    Rng rng(19);
    for (int t = 0; t < 1000; ++t) {
        const RadioConfig r = radio_with(rng.uniform(1e5, 1e7), rng.uniform(1e-12, 1e-9), rng.uniform(0.5, 10), 1);
        const double q = rng.uniform(1.0, 1e5);
        const std::size_t f = 1 + rng.below(8);
        const double h = channel_gain(rng.exponential(), rng.uniform(1, 100));
        const double p = optimal_power(q, f, h, r);
        EXPECT_NEAR(transmission_delay(q, f, h, p, r), r.delay_cap_s, 1e-9 * r.delay_cap_s);
        EXPECT_NEAR(p, power_by_inversion(q, f, h, r), 1e-9 * p);

        EXPECT_GE(optimal_power(q * 1.5, f, h, r), p);
        EXPECT_GE(optimal_power(q, f + 1, h, r), p);
        EXPECT_LE(optimal_power(q, f, h * 2, r), p);
        RadioConfig wide = r;
        wide.bandwidth_hz *= 2;
        EXPECT_LE(optimal_power(q, f, h, wide), p);
    }
}

TEST(Feasibility, SingleLinkGenerousCapAndZeroCap) {
    const DevicePlacement p({{0, 0}, {10, 0}}, 1);
    const std::vector<std::size_t> peer{1};
    EXPECT_TRUE(check_feasibility(0, peer, 1000, p, 1, radio_with(1e6, 1e-10, 5, 1e6)).feasible);
    const auto rep = check_feasibility(0, peer, 1000, p, 1, radio_with(1e6, 1e-10, 5, 0));
    EXPECT_FALSE(rep.feasible);
    ASSERT_EQ(rep.binding.size(), 1u);
    EXPECT_NE(rep.binding[0].find("power cap"), std::string::npos);
    EXPECT_TRUE(check_feasibility(0, {}, 1000, p, 1, radio_with(1e6, 1e-10, 5, 0)).feasible);
}

TEST(Feasibility, MatchesIndependentArithmeticAndDroppingLinksHelps) {
    Rng rng(23);
    int feasible = 0, infeasible = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const auto place = DevicePlacement::uniform_disc(10, 100, 1000 + inst);
        const RadioConfig r = radio_with(1e6, 1e-10, 5, rng.uniform(1e-7, 1e-3));
        const double q = rng.uniform(1e3, 2e5);
        for (std::size_t from = 0; from < 10; ++from) {
            std::vector<std::size_t> peers;
            for (std::size_t j = 0; j < 10; ++j)
                if (j != from && rng.bernoulli(0.5)) peers.push_back(j);
            if (peers.empty()) continue;
            double need = 0;
            for (std::size_t j : peers) need += power_by_inversion(q, peers.size(), channel_gain(place, from, j, 1), r);
            const auto rep = check_feasibility(from, peers, q, place, 1, r);
            if (std::abs(need - r.power_cap_w) > 1e-9 * r.power_cap_w) {
                EXPECT_EQ(rep.feasible, need <= r.power_cap_w);
            }
            (rep.feasible ? feasible : infeasible)++;
            if (rep.feasible && peers.size() > 1) {
                std::vector<std::size_t> fewer(peers.begin() + 1, peers.end());
                EXPECT_TRUE(check_feasibility(from, fewer, q, place, 1, r).feasible);
            }
        }
    }
    EXPECT_GT(feasible, 0);
    EXPECT_GT(infeasible, 0);
}
