#pragma once

// Sparse-and-orthogonal low-rank adapters.
//
// One AdapterPair lives on one layer: a static Gaussian projection A (r x k),
// a trainable expansion B (d x r) and a binary mask M over B. The layer's
// update is (B ⊙ M) A, or (B ⊙ M) A diag(ĥ) once the projection has been
// refined with the task's normalized mean activation ĥ.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"

namespace soldfl {

using Mask = std::vector<std::uint8_t>;

/// How build_mask ranks expansion entries.
enum class MaskSelect { magnitude, signed_value };

/// How topk ranks the projected vector.
enum class TopkRanking { magnitude, signed_value };

struct AdapterPair {
    std::size_t layer_index = 0;
    std::uint64_t seed = 0;
    Matrix projection;  // r x k, never modified after init_adapter
    Matrix expansion;   // d x r
    Mask mask;          // d * r, row-major over expansion
    double sparsity_rate = 1.0;
    bool mask_built = false;
    std::optional<Vector> refinement;          // ĥ, length k, unit norm
    std::optional<Matrix> refined_projection;  // A diag(ĥ)

    std::size_t d() const noexcept { return expansion.rows(); }
    std::size_t r() const noexcept { return projection.rows(); }
    std::size_t k() const noexcept { return projection.cols(); }

    std::size_t active_count() const noexcept {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }

    Matrix masked_expansion() const {
        Matrix out = expansion;
        auto od = out.data();
        for (std::size_t i = 0; i < od.size(); ++i)
            if (!mask[i]) od[i] = 0.0;
        return out;
    }

    /// Refined projection if present, otherwise the raw projection.
    const Matrix& routing_projection() const noexcept {
        return refined_projection ? *refined_projection : projection;
    }

    /// (B ⊙ M) times the routing projection, a d x k matrix.
    Matrix delta() const { return matmul(masked_expansion(), routing_projection()); }
};

using AdapterStack = std::vector<AdapterPair>;

/// Fresh adapter: A ~ N(0,1) from `seed`, B = 0, mask all ones.
inline AdapterPair init_adapter(std::size_t d, std::size_t k, std::size_t r, std::uint64_t seed,
                                std::size_t layer_index = 0) {
    if (d == 0 || k == 0 || r == 0) throw DimensionError("init_adapter: dimensions must be >= 1");
    if (r > std::min(d, k))
        throw DimensionError("init_adapter: rank " + std::to_string(r) + " exceeds min(d, k) = " +
                             std::to_string(std::min(d, k)));
    AdapterPair a;
    a.layer_index = layer_index;
    a.seed = seed;
    a.projection = gaussian_matrix(r, k, seed);
    a.expansion = Matrix(d, r, 0.0);
    a.mask.assign(d * r, 1);
    a.sparsity_rate = 1.0;
    return a;
}

/// Number of positions kept for a target density over n slots.
inline std::size_t kept_positions(double target, std::size_t n) {
    const double raw = target * static_cast<double>(n);
    auto keep = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    return std::clamp<std::size_t>(keep, 1, n);
}

/// Freeze the mask from the current expansion: keep the ⌈target·d·r⌉ largest
/// entries (ties go to the lower row-major index) and zero the rest.
inline AdapterPair build_mask(AdapterPair adapter, double target_sparsity,
                              MaskSelect select = MaskSelect::magnitude) {
    if (!(target_sparsity > 0.0 && target_sparsity <= 1.0))
        throw DomainError("build_mask: target sparsity must lie in (0, 1]");
    if (adapter.mask_built) throw StateError("build_mask: mask already built for this adapter");
    auto b = adapter.expansion.data();
    if (std::all_of(b.begin(), b.end(), [](double v) { return v == 0.0; }))
        throw StateError("build_mask: expansion is all zero; run one update first");

    const std::size_t n = b.size();
    const std::size_t keep = kept_positions(target_sparsity, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto score = [&](std::size_t i) { return select == MaskSelect::magnitude ? std::abs(b[i]) : b[i]; };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return score(x) > score(y); });

    adapter.mask.assign(n, 0);
    for (std::size_t i = 0; i < keep; ++i) adapter.mask[order[i]] = 1;
    for (std::size_t i = 0; i < n; ++i)
        if (!adapter.mask[i]) b[i] = 0.0;
    adapter.sparsity_rate = static_cast<double>(keep) / static_cast<double>(n);
    adapter.mask_built = true;
    return adapter;
}

/// A_refined = A diag(ĥ) with ĥ = mean_activation / |mean_activation|.
inline AdapterPair refine_projection(AdapterPair adapter, std::span<const double> mean_activation) {
    if (mean_activation.size() != adapter.k())
        throw DimensionError("refine_projection: activation length != k");
    const double n = norm2(mean_activation);
    if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("refine_projection: zero mean activation");
    Vector h(mean_activation.begin(), mean_activation.end());
    for (double& v : h) v /= n;
    Matrix refined = adapter.projection;
    for (std::size_t i = 0; i < refined.rows(); ++i)
        for (std::size_t j = 0; j < refined.cols(); ++j) refined(i, j) *= h[j];
    adapter.refinement = std::move(h);
    adapter.refined_projection = std::move(refined);
    return adapter;
}

/// Indices of the top_k entries of z (ties: lower index first). All indices when top_k >= |z|.
inline std::vector<std::size_t> topk_indices(std::span<const double> z, std::size_t top_k,
                                             TopkRanking ranking = TopkRanking::magnitude) {
    std::vector<std::size_t> idx(z.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (top_k >= z.size()) return idx;
    auto score = [&](std::size_t i) { return ranking == TopkRanking::magnitude ? std::abs(z[i]) : z[i]; };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    idx.resize(top_k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// z with every entry outside the top_k zeroed.
inline Vector topk(std::span<const double> z, std::size_t top_k,
                   TopkRanking ranking = TopkRanking::magnitude) {
    Vector out(z.size(), 0.0);
    for (std::size_t i : topk_indices(z, top_k, ranking)) out[i] = z[i];
    return out;
}

/// Normalized Tr(w_iᵀ w_j) with w = (B ⊙ M) A_refined; 0 when either side vanishes.
inline double frobenius_cross(const AdapterPair& ai, const AdapterPair& aj) {
    if (ai.d() != aj.d() || ai.k() != aj.k() || ai.r() != aj.r())
        throw DimensionError("frobenius_cross: adapters differ in shape");
    return normalized_inner(ai.delta(), aj.delta());
}

/// Per-task statistics of the frozen model on a probe batch.
struct TaskProfile {
    std::size_t task_id = 0;
    std::vector<Vector> mean_activation;  // per layer, length k_l
    std::vector<double> per_layer_entropy;
    std::vector<double> per_layer_sparsity;
};

/// Adapters received from other devices, one entry per origin.
struct BankEntry {
    std::size_t origin_device = 0;
    std::size_t origin_task = 0;
    AdapterStack layers;
};

class AdapterBank {
public:
    /// Inserts or replaces the entry for `entry.origin_device`. Entries stay sorted by origin.
    void upsert(BankEntry entry) {
        if (!entries_.empty() && !entries_.front().layers.empty() && !entry.layers.empty()) {
            const auto& ref = entries_.front().layers;
            if (ref.size() != entry.layers.size()) throw DimensionError("AdapterBank: layer count mismatch");
            for (std::size_t l = 0; l < ref.size(); ++l)
                if (ref[l].d() != entry.layers[l].d() || ref[l].k() != entry.layers[l].k())
                    throw DimensionError("AdapterBank: layer dimensions mismatch");
        }
        auto it = std::lower_bound(entries_.begin(), entries_.end(), entry.origin_device,
                                   [](const BankEntry& e, std::size_t id) { return e.origin_device < id; });
        if (it != entries_.end() && it->origin_device == entry.origin_device)
            *it = std::move(entry);
        else
            entries_.insert(it, std::move(entry));
    }

    const BankEntry* find(std::size_t origin) const {
        for (const auto& e : entries_)
            if (e.origin_device == origin) return &e;
        return nullptr;
    }

    BankEntry* find(std::size_t origin) {
        for (auto& e : entries_)
            if (e.origin_device == origin) return &e;
        return nullptr;
    }

    const std::vector<BankEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

private:
    std::vector<BankEntry> entries_;
};

}  // namespace soldfl
