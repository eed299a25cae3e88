#pragma once

// Frozen base stack plus trainable adapters, with hand-written reverse mode.
//
// Layer l computes a_l = W0_l h_l + Σ_e (B_e ⊙ M_e) topk(P_e h_l) [+ dense
// terms], and h_{l+1} = tanh(a_l) for every layer except the last. P_e is the
// refined projection when routing is refined, else the raw projection.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"

namespace soldfl {

struct FrozenModel {
    std::vector<Matrix> layers;  // W0_l, d_l x k_l, k_{l+1} = d_l

    std::size_t depth() const noexcept { return layers.size(); }
    std::size_t input_dim() const { return layers.front().cols(); }
    std::size_t output_dim() const { return layers.back().rows(); }
};

/// Random frozen stack. W0_l = gain·(√(1−m)·G_block/√b + √m·G/√k_l), where G
/// and G_block are standard Gaussian, G_block is restricted to `blocks`
/// diagonal blocks of width b ≈ k_l/blocks and m = mixing. mixing = 1 gives a
/// plain dense N(0, gain²/k_l) stack.
inline FrozenModel make_frozen_model(std::span<const std::size_t> widths, double gain, std::uint64_t seed,
                                     std::size_t blocks = 1, double mixing = 1.0) {
    if (widths.size() < 2) throw DimensionError("make_frozen_model: need at least input and output width");
    if (blocks == 0 || !(mixing >= 0.0 && mixing <= 1.0)) throw DomainError("make_frozen_model: bad block structure");
    FrozenModel m;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t rows = widths[l + 1], cols = widths[l];
        Matrix w = gaussian_matrix(rows, cols, derive_seed(seed, "frozen-layer", 0, l));
        const double dense_scale = gain * std::sqrt(mixing / static_cast<double>(cols));
        for (double& v : w.data()) v *= dense_scale;
        if (mixing < 1.0) {
            const Matrix g = gaussian_matrix(rows, cols, derive_seed(seed, "frozen-block", 0, l));
            const double b = std::max(1.0, static_cast<double>(cols) / static_cast<double>(blocks));
            const double block_scale = gain * std::sqrt((1.0 - mixing) / b);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j)
                    if (i * blocks / rows == j * blocks / cols) w(i, j) += block_scale * g(i, j);
        }
        m.layers.push_back(std::move(w));
    }
    return m;
}

struct Routing {
    bool refined = true;
    std::size_t top_k = std::numeric_limits<std::size_t>::max();
    TopkRanking ranking = TopkRanking::magnitude;
};

/// Dense LoRA factors with both sides trainable.
struct DenseLoraLayer {
    Matrix a;  // r x k
    Matrix b;  // d x r
};

/// Read-only description of one device's effective network.
struct ModelView {
    const FrozenModel* base = nullptr;
    std::vector<const AdapterStack*> entries;
    Routing routing{};
    const std::vector<DenseLoraLayer>* lora = nullptr;
    const std::vector<Matrix>* delta = nullptr;
};

struct ForwardTrace {
    std::vector<Vector> inputs;                                 // h_l per layer
    std::vector<std::vector<Vector>> selected;                  // [layer][entry] topk(P h)
    std::vector<std::vector<std::vector<std::size_t>>> kept;    // [layer][entry] kept indices
    std::vector<Vector> lora_projected;                         // A h per layer
};

namespace detail {

inline const Matrix& entry_projection(const AdapterPair& a, const Routing& routing) {
    if (!routing.refined) return a.projection;
    if (!a.refined_projection)
        throw StateError("layer " + std::to_string(a.layer_index) + ": refined projection missing");
    return *a.refined_projection;
}

}  // namespace detail

inline Vector forward(const ModelView& view, std::span<const double> x, ForwardTrace* trace = nullptr) {
    const FrozenModel& base = *view.base;
    const std::size_t depth = base.depth();
    if (trace) {
        trace->inputs.assign(depth, {});
        trace->selected.assign(depth, {});
        trace->kept.assign(depth, {});
        trace->lora_projected.assign(depth, {});
    }
    Vector h(x.begin(), x.end());
    for (std::size_t l = 0; l < depth; ++l) {
        Vector a = matvec(base.layers[l], h);
        if (trace) {
            trace->selected[l].resize(view.entries.size());
            trace->kept[l].resize(view.entries.size());
        }
        for (std::size_t e = 0; e < view.entries.size(); ++e) {
            const AdapterPair& ad = (*view.entries[e])[l];
            const Vector z = matvec(detail::entry_projection(ad, view.routing), h);
            auto kept = topk_indices(z, view.routing.top_k, view.routing.ranking);
            Vector sel(z.size(), 0.0);
            for (std::size_t i : kept) sel[i] = z[i];
            const Matrix& b = ad.expansion;
            for (std::size_t i = 0; i < b.rows(); ++i) {
                auto row = b.row(i);
                double s = 0.0;
                for (std::size_t j : kept) s += row[j] * sel[j];
                a[i] += s;
            }
            if (trace) {
                trace->selected[l][e] = std::move(sel);
                trace->kept[l][e] = std::move(kept);
            }
        }
        if (view.lora) {
            const auto& lr = (*view.lora)[l];
            Vector z = matvec(lr.a, h);
            Vector add = matvec(lr.b, z);
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += add[i];
            if (trace) trace->lora_projected[l] = std::move(z);
        }
        if (view.delta) {
            Vector add = matvec((*view.delta)[l], h);
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += add[i];
        }
        if (trace) trace->inputs[l] = std::move(h);
        if (l + 1 < depth) {
            for (double& v : a) v = std::tanh(v);
        }
        h = std::move(a);
    }
    return h;
}

/// Which parameters receive gradients.
struct GradientTarget {
    enum class Kind { entry, lora, delta } kind = Kind::entry;
    std::size_t entry = 0;  // index into ModelView::entries when kind == entry
};

struct Gradients {
    std::vector<Matrix> expansion;  // per layer, d x r (trainable entry)
    std::vector<Matrix> lora_a;
    std::vector<Matrix> lora_b;
    std::vector<Matrix> delta;
};

inline Gradients zero_gradients(const ModelView& view, const GradientTarget& target) {
    Gradients g;
    const std::size_t depth = view.base->depth();
    for (std::size_t l = 0; l < depth; ++l) {
        switch (target.kind) {
            case GradientTarget::Kind::entry: {
                const auto& ad = (*view.entries.at(target.entry))[l];
                g.expansion.emplace_back(ad.d(), ad.r());
                break;
            }
            case GradientTarget::Kind::lora:
                g.lora_a.emplace_back((*view.lora)[l].a.rows(), (*view.lora)[l].a.cols());
                g.lora_b.emplace_back((*view.lora)[l].b.rows(), (*view.lora)[l].b.cols());
                break;
            case GradientTarget::Kind::delta:
                g.delta.emplace_back((*view.delta)[l].rows(), (*view.delta)[l].cols());
                break;
        }
    }
    return g;
}

/// Adds d(loss)/d(params) for one sample given d(loss)/d(output).
inline void accumulate_gradients(const ModelView& view, const ForwardTrace& trace,
                                 std::span<const double> output_grad, const GradientTarget& target,
                                 Gradients& grads) {
    const FrozenModel& base = *view.base;
    Vector g(output_grad.begin(), output_grad.end());
    for (std::size_t l = base.depth(); l-- > 0;) {
        const Vector& h = trace.inputs[l];
        switch (target.kind) {
            case GradientTarget::Kind::entry: {
                const auto& sel = trace.selected[l][target.entry];
                const auto& kept = trace.kept[l][target.entry];
                Matrix& gb = grads.expansion[l];
                for (std::size_t i = 0; i < gb.rows(); ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    auto row = gb.row(i);
                    for (std::size_t j : kept) row[j] += gi * sel[j];
                }
                break;
            }
            case GradientTarget::Kind::lora: {
                const auto& lr = (*view.lora)[l];
                add_outer(grads.lora_b[l], g, trace.lora_projected[l]);
                Vector bt_g(lr.b.cols(), 0.0);
                matvec_transposed_add(lr.b, g, bt_g);
                add_outer(grads.lora_a[l], bt_g, h);
                break;
            }
            case GradientTarget::Kind::delta:
                add_outer(grads.delta[l], g, h);
                break;
        }
        if (l == 0) break;

        Vector gh(h.size(), 0.0);
        matvec_transposed_add(base.layers[l], g, gh);
        for (std::size_t e = 0; e < view.entries.size(); ++e) {
            const AdapterPair& ad = (*view.entries[e])[l];
            const Matrix& p = detail::entry_projection(ad, view.routing);
            const Matrix& b = ad.expansion;
            for (std::size_t j : trace.kept[l][e]) {
                double bt = 0.0;
                for (std::size_t i = 0; i < b.rows(); ++i) bt += b(i, j) * g[i];
                if (bt == 0.0) continue;
                auto prow = p.row(j);
                for (std::size_t c = 0; c < gh.size(); ++c) gh[c] += prow[c] * bt;
            }
        }
        if (view.lora) {
            const auto& lr = (*view.lora)[l];
            Vector bt_g(lr.b.cols(), 0.0);
            matvec_transposed_add(lr.b, g, bt_g);
            matvec_transposed_add(lr.a, bt_g, gh);
        }
        if (view.delta) matvec_transposed_add((*view.delta)[l], g, gh);
        // h is tanh of the previous layer's pre-activation.
        for (std::size_t c = 0; c < gh.size(); ++c) gh[c] *= (1.0 - h[c] * h[c]);
        g = std::move(gh);
    }
}

/// Mean over output dimensions of the squared error.
inline double mse(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw DimensionError("mse: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

struct Dataset {
    std::vector<Vector> x;
    std::vector<Vector> y;

    std::size_t size() const noexcept { return x.size(); }
};

/// Mean loss of the view over a dataset.
inline double evaluate(const ModelView& view, const Dataset& data) {
    if (data.size() == 0) throw DomainError("evaluate: empty dataset");
    double total = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) total += mse(forward(view, data.x[n]), data.y[n]);
    return total / static_cast<double>(data.size());
}

struct BatchGradient {
    double loss = 0.0;  // mean loss over the batch, before any step
    Gradients grads;
};

/// Mean MSE and its gradient over `batch` for the chosen parameter set.
inline BatchGradient batch_gradient(const ModelView& view, const Dataset& batch, const GradientTarget& target) {
    if (batch.size() == 0) throw DomainError("batch_gradient: empty batch");
    BatchGradient out{0.0, zero_gradients(view, target)};
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    ForwardTrace trace;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch.x[n].size() != view.base->input_dim() || batch.y[n].size() != view.base->output_dim())
            throw DimensionError("batch sample has wrong dimensions");
        Vector pred = forward(view, batch.x[n], &trace);
        out.loss += mse(pred, batch.y[n]) * inv_n;
        const double scale = 2.0 * inv_n / static_cast<double>(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = scale * (pred[i] - batch.y[n][i]);
        accumulate_gradients(view, trace, pred, target, out.grads);
    }
    return out;
}

struct LocalUpdateResult {
    double loss = 0.0;
    std::vector<Matrix> masked_gradient;  // ∂F/∂B ⊙ M per layer
};

/// One SGD step on the expansion matrices of `own`: B ← B − η (∂F/∂B ⊙ M).
/// `peers` are frozen bank entries that take part in the forward pass;
/// `frozen_delta` is an optional per-layer frozen d x k term added to the base.
/// The projection matrices are never touched.
inline LocalUpdateResult local_update(AdapterStack& own, const FrozenModel& base, const Dataset& batch,
                                      double learning_rate, const Routing& routing = {false},
                                      std::span<const AdapterStack* const> peers = {},
                                      const std::vector<Matrix>* frozen_delta = nullptr) {
    if (own.size() != base.depth()) throw DimensionError("local_update: adapter stack depth != model depth");
    ModelView view{&base, {peers.begin(), peers.end()}, routing};
    view.delta = frozen_delta;
    const std::size_t own_index = view.entries.size();
    view.entries.push_back(&own);

    BatchGradient bg = batch_gradient(view, batch, {GradientTarget::Kind::entry, own_index});
    LocalUpdateResult out{bg.loss, {}};
    for (std::size_t l = 0; l < own.size(); ++l) {
        Matrix& g = bg.grads.expansion[l];
        auto gd = g.data();
        const auto& mask = own[l].mask;
        for (std::size_t i = 0; i < gd.size(); ++i) {
            if (!std::isfinite(gd[i])) throw NumericFailure("local_update: non-finite gradient in layer " + std::to_string(l));
            if (!mask[i]) gd[i] = 0.0;
        }
        auto bd = own[l].expansion.data();
        for (std::size_t i = 0; i < bd.size(); ++i) bd[i] -= learning_rate * gd[i];
        out.masked_gradient.push_back(std::move(g));
    }
    return out;
}

/// Implicit-MoE layer output: W0_l h + Σ_entries (B ⊙ M) topk(A_refined h).
/// Every bank entry must carry a refined projection.
inline Vector implicit_moe_forward(const AdapterBank& bank, const FrozenModel& base, std::span<const double> layer_input,
                                   std::size_t layer_index, std::size_t top_k,
                                   TopkRanking ranking = TopkRanking::magnitude) {
    if (layer_index >= base.depth()) throw DimensionError("implicit_moe_forward: layer index out of range");
    Vector out = matvec(base.layers[layer_index], layer_input);
    for (const auto& entry : bank.entries()) {
        const AdapterPair& ad = entry.layers.at(layer_index);
        if (!ad.refined_projection)
            throw StateError("implicit_moe_forward: entry from device " + std::to_string(entry.origin_device) +
                             " has no refined projection");
        if (top_k > ad.r()) throw DomainError("implicit_moe_forward: top_k exceeds rank");
        const Vector z = topk(matvec(*ad.refined_projection, layer_input), top_k, ranking);
        const Vector add = matvec(ad.expansion, z);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += add[i];
    }
    return out;
}

}  // namespace soldfl
