#pragma once

// Parameter-collision analytics and the aggregation-gap bound.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/rng.hpp"

namespace soldfl {

/// P(at least two of the independent Bernoulli(s_j) activations coincide).
inline double collision_rate(std::span<const double> sparsities) {
    if (sparsities.empty()) throw DomainError("collision_rate: empty sparsity list");
    const std::size_t n = sparsities.size();
    for (double s : sparsities)
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("collision_rate: sparsity outside [0, 1]");
    if (n < 2) return 0.0;
    // Prefix and suffix products of (1 - s) avoid dividing by zero when some s = 1.
    std::vector<double> prefix(n + 1, 1.0), suffix(n + 1, 1.0);
    for (std::size_t j = 0; j < n; ++j) prefix[j + 1] = prefix[j] * (1.0 - sparsities[j]);
    for (std::size_t j = n; j-- > 0;) suffix[j] = suffix[j + 1] * (1.0 - sparsities[j]);
    double single = 0.0;
    for (std::size_t j = 0; j < n; ++j) single += sparsities[j] * prefix[j] * suffix[j + 1];
    return std::clamp(1.0 - prefix[n] - single, 0.0, 1.0);
}

/// Monte-Carlo estimate of collision_rate over i.i.d. Bernoulli masks.
inline double collision_rate_mc(std::span<const double> sparsities, std::size_t positions, std::uint64_t seed) {
    if (sparsities.empty()) throw DomainError("collision_rate_mc: empty sparsity list");
    if (positions < 10000) throw DomainError("collision_rate_mc: need at least 1e4 positions");
    Rng rng(seed);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < positions; ++p) {
        int active = 0;
        for (double s : sparsities) {
            if (rng.uniform() < s && ++active == 2) break;
        }
        if (active >= 2) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(positions);
}

/// Fraction of positions active in at least two masks.
inline double empirical_mask_collision(std::span<const Mask> masks) {
    if (masks.empty()) throw DomainError("empirical_mask_collision: no masks");
    const std::size_t n = masks.front().size();
    if (n == 0) throw DimensionError("empirical_mask_collision: empty mask");
    for (const Mask& m : masks)
        if (m.size() != n) throw DimensionError("empirical_mask_collision: mask shapes differ");
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
        int active = 0;
        for (const Mask& m : masks) active += m[p] ? 1 : 0;
        if (active >= 2) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct CollisionReport {
    std::vector<std::size_t> group;
    std::vector<double> per_layer_rate;
    double max_rate = 0.0;
};

/// `sparsity[device][layer]`; rates for the devices listed in `group`.
inline CollisionReport group_collision(std::span<const std::size_t> group,
                                       const std::vector<std::vector<double>>& sparsity) {
    CollisionReport rep;
    rep.group.assign(group.begin(), group.end());
    if (group.empty()) throw DomainError("group_collision: empty group");
    const std::size_t layers = sparsity.at(group.front()).size();
    std::vector<double> s(group.size());
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t g = 0; g < group.size(); ++g) s[g] = sparsity.at(group[g]).at(l);
        rep.per_layer_rate.push_back(collision_rate(s));
        rep.max_rate = std::max(rep.max_rate, rep.per_layer_rate.back());
    }
    return rep;
}

struct BoundEstimate {
    double lhs = 0.0;
    double rhs = 0.0;
    double g_hat = 0.0;
    double p_hat = 0.0;
    double collision = 0.0;

    bool holds() const noexcept { return lhs <= rhs; }
};

/// One cluster member's state for the gap bound at a single layer.
struct BoundMember {
    const Matrix* masked_expansion = nullptr;  // B ⊙ M, d x r
    const Matrix* projection = nullptr;        // refined A, r x k
    double sparsity = 0.0;
    double gradient_norm = 0.0;                // |(∂F/∂B ⊙ M) A|_F this round
};

/// lhs = Σ_i |(B_i⊙M_i − mean_j B_j⊙M_j) A_i|_F², rhs = 2 r k n² S (G + P).
/// G and P are envelope constants supplied by the caller (running maxima).
inline BoundEstimate theorem1_bound(std::span<const BoundMember> members, double g_hat, double p_hat) {
    BoundEstimate est;
    est.g_hat = g_hat;
    est.p_hat = p_hat;
    if (members.size() < 2) return est;
    const Matrix& first = *members.front().masked_expansion;
    Matrix mean(first.rows(), first.cols(), 0.0);
    std::vector<double> s;
    for (const auto& m : members) {
        if (!m.masked_expansion->same_shape(first)) throw DimensionError("theorem1_bound: expansion shapes differ");
        auto md = mean.data();
        auto bd = m.masked_expansion->data();
        for (std::size_t i = 0; i < md.size(); ++i) md[i] += bd[i] / static_cast<double>(members.size());
        s.push_back(m.sparsity);
    }
    for (const auto& m : members) {
        const Matrix gap = matmul(*m.masked_expansion - mean, *m.projection);
        est.lhs += frobenius_inner(gap, gap);
    }
    const auto n = static_cast<double>(members.size());
    const auto rk = static_cast<double>(first.cols() * members.front().projection->cols());
    est.collision = collision_rate(s);
    est.rhs = 2.0 * rk * n * n * est.collision * (g_hat + p_hat);
    return est;
}

/// |mean_j (B_j⊙M_j) A_i|_F for every member i, the per-round P observations.
inline std::vector<double> mean_projection_norms(std::span<const BoundMember> members) {
    std::vector<double> out;
    if (members.empty()) return out;
    const Matrix& first = *members.front().masked_expansion;
    Matrix mean(first.rows(), first.cols(), 0.0);
    for (const auto& m : members) {
        auto md = mean.data();
        auto bd = m.masked_expansion->data();
        for (std::size_t i = 0; i < md.size(); ++i) md[i] += bd[i] / static_cast<double>(members.size());
    }
    for (const auto& m : members) out.push_back(frobenius_norm(matmul(mean, *m.projection)));
    return out;
}

}  // namespace soldfl
