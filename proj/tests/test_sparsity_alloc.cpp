#include <gtest/gtest.h>

#include <cmath>

#include "soldfl/sparsity_alloc.hpp"

using namespace soldfl;

namespace {

FrozenModel one_layer(Matrix w) {
    FrozenModel m;
    m.layers.push_back(std::move(w));
    return m;
}

std::vector<LayerDims> uniform_dims(std::size_t layers, std::size_t d, std::size_t r) {
    return std::vector<LayerDims>(layers, LayerDims{d, r});
}

}  // namespace

TEST(ProbeCovariance, IdenticalVectors) {
    const FrozenModel base = one_layer(Matrix::identity(3));
    const Vector v{1.0, -2.0, 0.5};
    const auto s = probe_covariance(base, {v, v, v});
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(s.mean_activation[0][i], v[i], 1e-15);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.covariance[0](i, j), v[i] * v[j], 1e-15);
    }
}

TEST(ProbeCovariance, TwoSampleHandCase) {
    const FrozenModel base = one_layer(Matrix::identity(2));
    const std::vector<Vector> probe{{1.0, 0.0}, {0.0, 1.0}};
    const auto batch = probe_covariance(base, probe, CovarianceMode::batch);
    EXPECT_EQ(batch.mean_activation[0], (Vector{0.5, 0.5}));
    EXPECT_EQ(batch.covariance[0], Matrix(2, 2, {0.5, 0.0, 0.0, 0.5}));
    const auto outer = probe_covariance(base, probe, CovarianceMode::mean_outer);
    EXPECT_EQ(outer.covariance[0], Matrix(2, 2, {0.25, 0.25, 0.25, 0.25}));
}

TEST(ProbeCovariance, SymmetricAndEmptyRejected) {
    std::vector<std::size_t> widths{6, 5, 4};
    const FrozenModel base = make_frozen_model(widths, 1.0, 3);
    std::vector<Vector> probe;
    Rng rng(4);
    for (int n = 0; n < 20; ++n) {
        Vector x(6);
        for (double& v : x) v = rng.normal();
        probe.push_back(x);
    }
    const auto s = probe_covariance(base, probe);
    ASSERT_EQ(s.covariance.size(), 2u);
    for (const Matrix& c : s.covariance) EXPECT_EQ(c, transpose(c));
    EXPECT_THROW(probe_covariance(base, {}), DomainError);
}

TEST(LayerEntropies, IdentityIsLogWidth) {
    const FrozenModel base = one_layer(Matrix::identity(5));
    const auto h = layer_entropies(base, {Matrix::identity(5)});
    EXPECT_NEAR(h[0], std::log(5.0), 1e-12);
}

TEST(LayerEntropies, RankOneCovarianceIsZero) {
    const FrozenModel base = one_layer(gaussian_matrix(4, 4, 1));
    Matrix c(4, 4);
    const Vector u{1.0, 2.0, -1.0, 0.5};
    add_outer(c, u, u);
    EXPECT_NEAR(layer_entropies(base, {c})[0], 0.0, 1e-12);
}

TEST(LayerEntropies, MatchesSvdComposition) {
    const FrozenModel base = one_layer(gaussian_matrix(8, 8, 21));
    const Matrix g = gaussian_matrix(8, 8, 22);
    const Matrix c = matmul(g, transpose(g));
    const auto sigma = svd(matmul(base.layers[0], c)).singular_values;
    EXPECT_NEAR(layer_entropies(base, {c})[0], spectral_entropy(sigma), 1e-12);
}

TEST(AllocateSparsity, EqualEntropiesSplitEvenly) {
    const std::vector<double> h{0.7, 0.7};
    const auto dims = uniform_dims(2, 10, 10);
    const auto b = allocate_sparsity(h, 100, dims);
    EXPECT_EQ(b.per_layer_counts, (std::vector<std::size_t>{50, 50}));
    EXPECT_EQ(b.per_layer_sparsity, (std::vector<double>{0.5, 0.5}));
}

// Softmax (2/3, 1/3) gives raw (66.67, 33.33). Layer 0 clamps at 50 and its
// 16.67 surplus all goes to layer 1, the only unclamped layer: 33.33 + 16.67 = 50.
TEST(AllocateSparsity, ClampedSurplusRedistributedOnce) {
    const std::vector<double> h{std::log(2.0), 0.0};
    const auto dims = uniform_dims(2, 10, 5);
    const double w0 = 2.0 / 3.0, raw0 = 100 * w0, raw1 = 100 * (1 - w0);
    const double oracle1 = std::ceil(raw1 + (raw0 - 50.0) - 1e-9);
    const auto b = allocate_sparsity(h, 100, dims);
    EXPECT_EQ(b.per_layer_counts[0], 50u);
    EXPECT_EQ(b.per_layer_counts[1], static_cast<std::size_t>(oracle1));
    EXPECT_EQ(b.per_layer_counts[1], 50u);
}

TEST(AllocateSparsity, BudgetBelowLayerCountRejected) {
    const std::vector<double> h{0.1, 0.2, 0.3};
    const auto dims = uniform_dims(3, 4, 4);
    EXPECT_THROW(allocate_sparsity(h, 2, dims), ConfigError);
    const std::vector<double> bad{0.1, std::nan(""), 0.3};
    EXPECT_THROW(allocate_sparsity(bad, 10, dims), DomainError);
}

TEST(AllocateSparsity, PropertiesOverRandomDraws) {
    Rng rng(77);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t layers = 1 + rng.below(8);
        std::vector<double> h(layers);
        std::vector<LayerDims> dims;
        std::size_t capacity = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            h[l] = rng.uniform(0.0, 4.0);
            dims.push_back({1 + rng.below(32), 1 + rng.below(8)});
            capacity += dims.back().capacity();
        }
        const std::size_t q = layers + rng.below(2 * capacity);
        const auto b = allocate_sparsity(h, q, dims);
        std::size_t sum = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            EXPECT_GT(b.per_layer_sparsity[l], 0.0);
            EXPECT_LE(b.per_layer_sparsity[l], 1.0);
            EXPECT_GE(b.per_layer_counts[l], 1u);
            sum += b.per_layer_counts[l];
        }
        EXPECT_LE(sum, q + layers);

        std::vector<double> shifted = h;
        for (double& v : shifted) v += 3.25;
        EXPECT_EQ(allocate_sparsity(shifted, q, dims).per_layer_counts, b.per_layer_counts);
    }
}

TEST(AllocateSparsity, RaisingOneEntropyNeverLowersItsCount) {
    Rng rng(78);
    const auto dims = uniform_dims(4, 1000, 10);
    for (int t = 0; t < 300; ++t) {
        std::vector<double> h(4);
        for (double& v : h) v = rng.uniform(0.0, 3.0);
        const std::size_t l = rng.below(4);
        const auto before = allocate_sparsity(h, 400, dims).per_layer_counts[l];
        h[l] += rng.uniform(0.0, 2.0);
        EXPECT_GE(allocate_sparsity(h, 400, dims).per_layer_counts[l], before);
    }
}

TEST(ParameterBudget, FloorOfComputeRatio) {
    EXPECT_EQ(parameter_budget(24576, 32, 6, 256), 512u);
    EXPECT_EQ(parameter_budget(1000, 3, 7, 10), 42u);
    EXPECT_THROW(parameter_budget(0, 1, 1, 1), ConfigError);
}
