#pragma once

// Per-layer sparsity budgets from the spectral entropy of W0 C on a probe batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/model.hpp"

namespace soldfl {

/// batch: C = (1/n) Σ h hᵀ over probe samples. mean_outer: C = h̄ h̄ᵀ.
enum class CovarianceMode { batch, mean_outer };

struct ProbeStats {
    std::vector<Vector> mean_activation;  // per layer input
    std::vector<Matrix> covariance;
};

struct LayerDims {
    std::size_t d = 0;
    std::size_t r = 0;

    std::size_t capacity() const noexcept { return d * r; }
};

struct LayerBudget {
    std::size_t q_budget = 0;
    std::vector<std::size_t> per_layer_counts;
    std::vector<double> per_layer_sparsity;
};

/// Layer inputs of the frozen stack: h_0 = x, h_{l+1} = tanh(W0_l h_l).
inline std::vector<Vector> frozen_layer_inputs(const FrozenModel& base, std::span<const double> x) {
    std::vector<Vector> out;
    out.reserve(base.depth());
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < base.depth(); ++l) {
        out.push_back(h);
        if (l + 1 == base.depth()) break;
        h = matvec(base.layers[l], h);
        for (double& v : h) v = std::tanh(v);
    }
    return out;
}

inline ProbeStats probe_covariance(const FrozenModel& base, const std::vector<Vector>& probe,
                                   CovarianceMode mode = CovarianceMode::batch) {
    if (probe.empty()) throw DomainError("probe_covariance: empty probe batch");
    const std::size_t depth = base.depth();
    ProbeStats out;
    for (std::size_t l = 0; l < depth; ++l) {
        out.mean_activation.emplace_back(base.layers[l].cols(), 0.0);
        out.covariance.emplace_back(base.layers[l].cols(), base.layers[l].cols(), 0.0);
    }
    const double inv_n = 1.0 / static_cast<double>(probe.size());
    for (const Vector& x : probe) {
        if (x.size() != base.input_dim()) throw DimensionError("probe_covariance: sample has wrong length");
        auto inputs = frozen_layer_inputs(base, x);
        for (std::size_t l = 0; l < depth; ++l) {
            for (std::size_t i = 0; i < inputs[l].size(); ++i) out.mean_activation[l][i] += inputs[l][i] * inv_n;
            if (mode == CovarianceMode::batch) add_outer(out.covariance[l], inputs[l], inputs[l], inv_n);
        }
    }
    if (mode == CovarianceMode::mean_outer)
        for (std::size_t l = 0; l < depth; ++l)
            add_outer(out.covariance[l], out.mean_activation[l], out.mean_activation[l]);
    // Summation order can leave the two triangles a few ulps apart.
    for (Matrix& c : out.covariance)
        for (std::size_t i = 0; i < c.rows(); ++i)
            for (std::size_t j = i + 1; j < c.cols(); ++j) c(j, i) = c(i, j);
    return out;
}

/// Singular values of W0_l C_l with values below 1e-12 σ_max set to 0.
inline Vector layer_spectrum(const Matrix& w0, const Matrix& covariance) {
    Vector sigma = svd(matmul(w0, covariance)).singular_values;
    const double top = sigma.empty() ? 0.0 : sigma.front();
    for (double& s : sigma)
        if (s <= 1e-12 * top) s = 0.0;
    return sigma;
}

/// Spectral entropy per layer. A layer whose product vanishes gets entropy 0.
inline std::vector<double> layer_entropies(const FrozenModel& base, const std::vector<Matrix>& covariances,
                                           const EntropyOptions& opt = {}) {
    if (covariances.size() != base.depth()) throw DimensionError("layer_entropies: one covariance per layer required");
    std::vector<double> out;
    for (std::size_t l = 0; l < base.depth(); ++l) {
        Vector sigma = layer_spectrum(base.layers[l], covariances[l]);
        if (sigma.empty() || sigma.front() == 0.0) {
            out.push_back(0.0);
            continue;
        }
        out.push_back(spectral_entropy(sigma, opt));
    }
    return out;
}

/// Parameter budget floor(c_max · B / (ε · N)).
inline std::size_t parameter_budget(double compute_cap, std::size_t batch_size, double flops_per_param_sample,
                                    std::size_t sample_count) {
    if (!(compute_cap > 0.0) || !(flops_per_param_sample > 0.0) || sample_count == 0 || batch_size == 0)
        throw ConfigError("compute_cap", "parameter_budget: all inputs must be positive");
    const double q = compute_cap * static_cast<double>(batch_size) /
                     (flops_per_param_sample * static_cast<double>(sample_count));
    return static_cast<std::size_t>(std::floor(q * (1.0 + 1e-12)));
}

namespace detail {

inline std::size_t ceil_count(double raw) {
    return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

}  // namespace detail

/// Softmax-of-entropy allocation, clamped at full density, with one
/// proportional redistribution of the clamped surplus.
inline LayerBudget allocate_sparsity(std::span<const double> entropies, std::size_t q_budget,
                                     std::span<const LayerDims> dims) {
    const std::size_t layers = entropies.size();
    if (layers == 0 || dims.size() != layers) throw DimensionError("allocate_sparsity: one entropy per layer required");
    if (q_budget < layers)
        throw ConfigError("q_budget", "q_budget " + std::to_string(q_budget) + " is below the layer count " +
                                          std::to_string(layers));
    for (double h : entropies)
        if (!std::isfinite(h)) throw DomainError("allocate_sparsity: non-finite entropy");

    const double top = *std::max_element(entropies.begin(), entropies.end());
    std::vector<double> w(layers);
    double total = 0.0;
    for (std::size_t l = 0; l < layers; ++l) total += (w[l] = std::exp(entropies[l] - top));
    for (double& v : w) v /= total;

    std::vector<double> raw(layers);
    std::vector<bool> clamped(layers, false);
    double surplus = 0.0;
    double free_weight = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
        raw[l] = static_cast<double>(q_budget) * w[l];
        const auto cap = static_cast<double>(dims[l].capacity());
        if (detail::ceil_count(raw[l]) >= dims[l].capacity()) {
            clamped[l] = true;
            surplus += std::max(0.0, raw[l] - cap);
        } else {
            free_weight += w[l];
        }
    }

    LayerBudget out;
    out.q_budget = q_budget;
    for (std::size_t l = 0; l < layers; ++l) {
        double share = raw[l];
        if (!clamped[l] && free_weight > 0.0) share += surplus * w[l] / free_weight;
        const std::size_t count =
            std::clamp<std::size_t>(detail::ceil_count(share), 1, dims[l].capacity());
        out.per_layer_counts.push_back(count);
        out.per_layer_sparsity.push_back(static_cast<double>(count) / static_cast<double>(dims[l].capacity()));
    }
    return out;
}

/// Probe statistics, entropies and allocation for one task.
inline TaskProfile profile_task(std::size_t task_id, const FrozenModel& base, const std::vector<Vector>& probe,
                                std::span<const LayerDims> dims, std::size_t q_budget,
                                CovarianceMode mode = CovarianceMode::batch, const EntropyOptions& opt = {}) {
    ProbeStats stats = probe_covariance(base, probe, mode);
    TaskProfile p;
    p.task_id = task_id;
    p.per_layer_entropy = layer_entropies(base, stats.covariance, opt);
    p.per_layer_sparsity = allocate_sparsity(p.per_layer_entropy, q_budget, dims).per_layer_sparsity;
    p.mean_activation = std::move(stats.mean_activation);
    return p;
}

}  // namespace soldfl
