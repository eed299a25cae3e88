#include <gtest/gtest.h>

#include <cmath>

#include "soldfl/collision.hpp"

using namespace soldfl;

namespace {

// Sums the probability of every activation pattern with two or more devices on.
double collision_by_enumeration(const std::vector<double>& s) {
    const std::size_t n = s.size();
    double total = 0.0;
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << n); ++pattern) {
        if (std::popcount(pattern) < 2) continue;
        double p = 1.0;
        for (std::size_t j = 0; j < n; ++j) p *= (pattern >> j) & 1 ? s[j] : 1.0 - s[j];
        total += p;
    }
    return total;
}

double rate(std::initializer_list<double> s) {
    const std::vector<double> v(s);
    return collision_rate(v);
}

}  // namespace

TEST(CollisionRate, WorkedExamples) {
    EXPECT_EQ(rate({0.3}), 0.0);
    EXPECT_NEAR(rate({0.5, 0.5}), 0.25, 1e-15);
    EXPECT_NEAR(rate({0.1, 0.2, 0.3}), 1.0 - 0.504 - 0.398, 1e-15);
    EXPECT_NEAR(rate({0.1, 0.2, 0.3}), 0.098, 1e-15);
    EXPECT_NEAR(rate({0.2, 0.2}), 0.04, 1e-15);
    EXPECT_NEAR(rate({0.2, 0.2, 0.2}), 0.104, 1e-15);
    EXPECT_EQ(rate({1.0, 1.0}), 1.0);
    EXPECT_EQ(rate({1.0, 0.0, 0.0}), 0.0);
}

TEST(CollisionRate, DomainErrors) {
    EXPECT_THROW(collision_rate(std::vector<double>{}), DomainError);
    EXPECT_THROW(rate({0.5, 1.5}), DomainError);
    EXPECT_THROW(rate({-0.1}), DomainError);
}

TEST(CollisionRate, MatchesEnumerationSymmetricAndMonotone) {
    Rng rng(12);
    for (int t = 0; t < 500; ++t) {
        std::vector<double> s(1 + rng.below(10));
        for (double& v : s) v = rng.uniform();
        if (t % 7 == 0) s[0] = 1.0;
        const double c = collision_rate(s);
        EXPECT_NEAR(c, collision_by_enumeration(s), 1e-12);
        EXPECT_GE(c, 0.0);
        EXPECT_LE(c, 1.0);

        std::vector<double> rev(s.rbegin(), s.rend());
        EXPECT_NEAR(collision_rate(rev), c, 1e-14);

        std::vector<double> raised = s;
        const std::size_t j = rng.below(s.size());
        raised[j] = std::min(1.0, raised[j] + rng.uniform(0.0, 0.5));
        EXPECT_GE(collision_rate(raised), c - 1e-14);

        std::vector<double> extended = s;
        extended.push_back(rng.uniform());
        EXPECT_GE(collision_rate(extended), c - 1e-14);
    }
}

TEST(CollisionRateMc, WithinThreeSigmaOfClosedForm) {
    const std::vector<double> s{0.5, 0.5};
    const double sigma = std::sqrt(0.25 * 0.75 / 1e6);
    EXPECT_NEAR(collision_rate_mc(s, 1000000, 5), 0.25, 3 * sigma);
    EXPECT_LE(3 * sigma, 0.0013);
}

TEST(CollisionRateMc, DegenerateCasesExact) {
    EXPECT_EQ(collision_rate_mc(std::vector<double>{1.0, 1.0}, 10000, 1), 1.0);
    EXPECT_EQ(collision_rate_mc(std::vector<double>{0.0, 0.9}, 10000, 1), 0.0);
    EXPECT_THROW(collision_rate_mc(std::vector<double>{0.5, 0.5}, 9999, 1), DomainError);
}

TEST(EmpiricalMaskCollision, FullDisjointAndRandom) {
    const Mask full(16, 1), left{1, 1, 0, 0}, right{0, 0, 1, 1};
    EXPECT_EQ(empirical_mask_collision(std::vector<Mask>{full, full}), 1.0);
    EXPECT_EQ(empirical_mask_collision(std::vector<Mask>{left, right}), 0.0);
    EXPECT_THROW(empirical_mask_collision(std::vector<Mask>{left, full}), DimensionError);

    Rng rng(13);
    Mask a(4096), b(4096);
    for (std::size_t p = 0; p < 4096; ++p) {
        a[p] = rng.bernoulli(0.5);
        b[p] = rng.bernoulli(0.5);
    }
    EXPECT_NEAR(empirical_mask_collision(std::vector<Mask>{a, b}), 0.25, 3 * std::sqrt(0.25 * 0.75 / 4096));
}

TEST(GroupCollision, SingletonIsZeroAndMaxOverLayers) {
    const std::vector<std::vector<double>> sp{{0.5, 0.1}, {0.5, 0.9}, {0.2, 0.2}};
    const std::vector<std::size_t> one{1}, pair{0, 1};
    const auto r1 = group_collision(one, sp);
    EXPECT_EQ(r1.per_layer_rate, (std::vector<double>{0.0, 0.0}));
    const auto r2 = group_collision(pair, sp);
    EXPECT_NEAR(r2.per_layer_rate[0], 0.25, 1e-15);
    EXPECT_NEAR(r2.per_layer_rate[1], 0.09, 1e-15);
    EXPECT_NEAR(r2.max_rate, 0.25, 1e-15);
}

TEST(BoundEstimate, IdenticalAdaptersHaveZeroGap) {
    const Matrix b = gaussian_matrix(4, 2, 1), a1 = gaussian_matrix(2, 5, 2), a2 = gaussian_matrix(2, 5, 3);
    const std::vector<BoundMember> members{{&b, &a1, 0.5, 1.0}, {&b, &a2, 0.5, 1.0}};
    const auto est = theorem1_bound(members, 1.0, 2.0);
    EXPECT_NEAR(est.lhs, 0.0, 1e-24);
    EXPECT_NEAR(est.collision, 0.25, 1e-15);
    EXPECT_NEAR(est.rhs, 2.0 * 2 * 5 * 4 * 0.25 * 3.0, 1e-12);
    EXPECT_TRUE(est.holds());
}

TEST(BoundEstimate, SingletonIsAllZero) {
    const Matrix b = gaussian_matrix(4, 2, 1), a = gaussian_matrix(2, 5, 2);
    const std::vector<BoundMember> members{{&b, &a, 0.5, 1.0}};
    const auto est = theorem1_bound(members, 3.0, 4.0);
    EXPECT_EQ(est.lhs, 0.0);
    EXPECT_EQ(est.rhs, 0.0);
    EXPECT_EQ(est.collision, 0.0);
}

// Two members with B_1 = -B_2: the mean is zero, so each gap is B_i A_i.
TEST(BoundEstimate, OppositeAdaptersHandCase) {
    const Matrix b1(1, 1, {2.0}), b2(1, 1, {-2.0}), a1(1, 1, {3.0}), a2(1, 1, {0.5});
    const std::vector<BoundMember> members{{&b1, &a1, 1.0, 0.0}, {&b2, &a2, 1.0, 0.0}};
    const auto est = theorem1_bound(members, 0.0, 0.0);
    EXPECT_NEAR(est.lhs, 36.0 + 1.0, 1e-12);
    EXPECT_EQ(est.rhs, 0.0);
    EXPECT_FALSE(est.holds());
    const auto norms = mean_projection_norms(members);
    EXPECT_EQ(norms, (std::vector<double>{0.0, 0.0}));
}
