#pragma once

// The acceptance suite. Every criterion is self-contained, seeded and prints
// one PASS/FAIL line with the measured numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/collision.hpp"
#include "soldfl/config.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/metrics_io.hpp"
#include "soldfl/model.hpp"
#include "soldfl/rng.hpp"
#include "soldfl/sim.hpp"
#include "soldfl/sparsity_alloc.hpp"
#include "soldfl/topology.hpp"
#include "soldfl/wireless.hpp"

namespace soldfl::acceptance {

struct Result {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string num(double v) { return fmt("%.4g", v); }

inline double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Standard error of the mean.
inline double sem(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// P(≥2 of n independent Bernoulli) by 1 − P(none) − P(exactly one), written out term by term.
inline double collision_by_terms(const std::vector<double>& s) {
    double none = 1.0;
    for (double v : s) none *= 1.0 - v;
    double one = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double t = s[i];
        for (std::size_t j = 0; j < s.size(); ++j)
            if (j != i) t *= 1.0 - s[j];
        one += t;
    }
    return 1.0 - none - one;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = mean(ra), mb = mean(rb);
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return (da > 0.0 && db > 0.0) ? num / std::sqrt(da * db) : 0.0;
}

}  // namespace detail

inline std::string criterion_name(int id) {
    static const char* const names[] = {
        "collision-rate oracle equivalence",
        "Gaussian projection orthogonality",
        "refined adapter cross-orthogonality",
        "collision bound lhs <= rhs",
        "optimal power / delay round trip",
        "topology validity",
        "communication accounting",
        "multi-task ordering",
        "gradient correctness",
        "entropy allocation sanity",
        "determinism",
    };
    return id >= 1 && id <= 11 ? names[id - 1] : "unknown";
}

/// 1. Closed-form collision rate against Monte-Carlo over 10⁶ positions.
inline Result collision_oracle() {
    Result r{1, criterion_name(1), false, {}, 0.0};
    Rng rng(derive_seed(101, "acceptance-collision"));
    std::size_t bad = 0;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        std::vector<double> s(n);
        for (double& v : s) v = rng.uniform();
        const double p = collision_rate(s);
        const double mc = collision_rate_mc(s, 1'000'000, derive_seed(102, "mc", trial));
        const double sigma = std::sqrt(p * (1.0 - p) / 1e6);
        const double z = sigma > 0.0 ? std::abs(mc - p) / sigma : (mc == p ? 0.0 : INFINITY);
        worst = std::max(worst, z);
        if (z > 4.0) ++bad;
    }
    r.passed = bad == 0;
    r.detail = "500 vectors, worst |z| = " + detail::num(worst) + ", outside 4 sigma: " + std::to_string(bad);
    return r;
}

/// 2. Independently seeded Gaussian projections are nearly orthogonal.
inline Result gaussian_orthogonality() {
    Result r{2, criterion_name(2), false, {}, 0.0};
    std::vector<double> v;
    double worst = 0.0;
    for (std::size_t p = 0; p < 200; ++p) {
        const Matrix a = gaussian_matrix(8, 64, derive_seed(201, "orth", p, 0));
        const Matrix b = gaussian_matrix(8, 64, derive_seed(201, "orth", p, 1));
        v.push_back(normalized_inner(a, b));
        worst = std::max(worst, std::abs(v.back()));
    }
    const double m = detail::mean(v), se = detail::sem(v);
    r.passed = worst < 0.2 && std::abs(m) <= 3.0 * se;
    r.detail = "max |cos| = " + detail::num(worst) + ", mean = " + detail::num(m) + ", 3 SE = " + detail::num(3 * se);
    return r;
}

/// 3. After one local update on distinct tasks, refined adapters are nearly orthogonal.
inline Result refined_cross_orthogonality() {
    Result r{3, criterion_name(3), false, {}, 0.0};
    constexpr std::size_t d = 32, k = 64, rank = 8, batch = 32;
    std::vector<double> v;
    double worst = 0.0;
    for (std::size_t p = 0; p < 200; ++p) {
        const std::size_t widths[] = {k, d};
        const FrozenModel base = make_frozen_model(widths, 1.0, derive_seed(301, "base", p));
        AdapterPair ad[2];
        for (std::size_t side = 0; side < 2; ++side) {
            const std::uint64_t ts = derive_seed(301, "task", p, side);
            const Matrix mu = gaussian_matrix(k, 1, derive_seed(ts, "mean"));
            const Matrix delta = (1.0 / std::sqrt(static_cast<double>(k))) * gaussian_matrix(d, k, derive_seed(ts, "delta"));
            Rng rng(derive_seed(ts, "samples"));
            Dataset data;
            Vector mean_x(k, 0.0);
            for (std::size_t n = 0; n < batch; ++n) {
                Vector x(k);
                for (std::size_t j = 0; j < k; ++j) x[j] = mu(j, 0) + rng.normal();
                for (std::size_t j = 0; j < k; ++j) mean_x[j] += x[j] / static_cast<double>(batch);
                Vector y = matvec(base.layers[0], x);
                const Vector dy = matvec(delta, x);
                for (std::size_t i = 0; i < d; ++i) y[i] += dy[i];
                data.x.push_back(std::move(x));
                data.y.push_back(std::move(y));
            }
            AdapterStack stack{refine_projection(init_adapter(d, k, rank, derive_seed(ts, "projection")), mean_x)};
            local_update(stack, base, data, 0.1, Routing{true});
            ad[side] = std::move(stack.front());
        }
        v.push_back(frobenius_cross(ad[0], ad[1]));
        worst = std::max(worst, std::abs(v.back()));
    }
    const double m = detail::mean(v), se = detail::sem(v);
    r.passed = worst < 0.2 && std::abs(m) <= 3.0 * se;
    r.detail = "max |cross| = " + detail::num(worst) + ", mean = " + detail::num(m) + ", 3 SE = " + detail::num(3 * se);
    return r;
}

/// 4. The collision bound holds at every round and layer of a 6-device run.
inline Result collision_bound(const ExperimentConfig& base_cfg) {
    Result r{4, criterion_name(4), false, {}, 0.0};
    std::size_t checks = 0, violations = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig cfg = base_cfg;
        cfg.method = Method::proposed;
        cfg.devices = 6;
        cfg.tasks = 4;
        cfg.rounds = 100;
        cfg.seed = seed;
        const RunResult run = run_experiment(cfg);
        for (const auto& m : run.rounds) {
            checks += m.bound_checks;
            violations += m.bound_violations;
        }
    }
    r.passed = checks > 0 && violations == 0;
    r.detail = "5 seeds x 100 rounds, " + std::to_string(checks) + " cluster-layer checks, " +
               std::to_string(violations) + " violations";
    return r;
}

/// 5. transmission_delay(optimal_power(.)) returns the delay cap.
inline Result power_delay_roundtrip() {
    Result r{5, criterion_name(5), false, {}, 0.0};
    Rng rng(derive_seed(501, "roundtrip"));
    auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, rng.uniform()); };
    double worst = 0.0;
    std::size_t done = 0;
    while (done < 1000) {
        RadioConfig radio;
        radio.bandwidth_hz = log_uniform(1e5, 1e7);
        radio.noise_variance = log_uniform(1e-13, 1e-8);
        radio.delay_cap_s = log_uniform(0.1, 10.0);
        radio.power_cap_w = log_uniform(0.01, 10.0);
        const double q = std::floor(log_uniform(1.0, 1e5));
        const std::size_t fanout = 1 + rng.below(10);
        const double gain = log_uniform(1e-8, 1e-2);
        double p = 0.0;
        try {
            p = optimal_power(q, fanout, gain, radio);
        } catch (const InfeasibleError&) {
            continue;
        }
        if (!(p <= radio.power_cap_w)) continue;
        const double delay = transmission_delay(q, fanout, gain, p, radio);
        worst = std::max(worst, std::abs(delay - radio.delay_cap_s) / radio.delay_cap_s);
        ++done;
    }
    r.passed = worst <= 1e-9;
    r.detail = "1000 feasible tuples, worst relative error " + detail::fmt("%.3g", worst);
    return r;
}

/// 6. Clusters respect the collision cap and every device its power cap.
inline Result topology_validity() {
    Result r{6, criterion_name(6), false, {}, 0.0};
    constexpr std::size_t n = 10, layers = 4;
    Rng rng(derive_seed(601, "topology"));
    std::size_t collision_bad = 0, power_bad = 0, merged = 0;
    for (std::size_t inst = 0; inst < 100; ++inst) {
        std::vector<std::vector<double>> sp(n, std::vector<double>(layers));
        for (auto& row : sp)
            for (double& v : row) v = 0.6 * rng.uniform();
        TopologyInputs in;
        in.sparsity = &sp;
        for (std::size_t i = 0; i < n; ++i) in.payload_params.push_back(std::floor(100.0 + 4900.0 * rng.uniform()));
        const DevicePlacement placement =
            DevicePlacement::uniform_disc(n, 50.0 + 250.0 * rng.uniform(), derive_seed(601, "placement", inst));
        in.placement = &placement;
        in.radio.power_cap_w = 0.01 + 2.0 * rng.uniform();
        in.round = 1 + rng.below(50);
        ClusterConfig cfg;
        cfg.s_max = 0.05 + 0.55 * rng.uniform();
        const ClusterPlan plan = agnes_cluster(in, cfg);
        for (const auto& c : plan.clusters) {
            if (c.size() > 1) ++merged;
            for (std::size_t l = 0; l < layers; ++l) {
                std::vector<double> s;
                for (auto d : c) s.push_back(sp[d][l]);
                if (detail::collision_by_terms(s) > cfg.s_max + 1e-12) ++collision_bad;
            }
        }
        const ClusterPlan inner = build_connection(plan, ExchangePhase::inner_aggregate, in);
        for (const ClusterPlan* u : {&plan, &inner}) {
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t fanout = 0;
                for (std::size_t j = 0; j < n; ++j) fanout += u->u(i, j);
                if (fanout == 0) continue;
                double total = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!u->u(i, j)) continue;
                    const double dist = std::max(1.0, std::hypot(placement.positions()[i].x - placement.positions()[j].x,
                                                                 placement.positions()[i].y - placement.positions()[j].y));
                    const double h = placement.fading(i, j, in.round) / (dist * dist);
                    const double e = in.payload_params[i] * in.radio.bits_per_parameter * static_cast<double>(fanout) /
                                     (in.radio.bandwidth_hz * in.radio.delay_cap_s);
                    total += in.radio.noise_variance / h * (std::pow(2.0, e) - 1.0);
                }
                if (total > in.radio.power_cap_w * (1.0 + 1e-9)) ++power_bad;
            }
        }
    }
    r.passed = collision_bad == 0 && power_bad == 0 && merged > 0;
    r.detail = "100 instances, " + std::to_string(merged) + " multi-device clusters, collision violations " +
               std::to_string(collision_bad) + ", power violations " + std::to_string(power_bad);
    return r;
}

/// 7. Transmitted bits match the closed forms; LoRA sends exactly 4x at s = 0.5.
inline Result communication_accounting(const ExperimentConfig& base_cfg) {
    Result r{7, criterion_name(7), false, {}, 0.0};
    ExperimentConfig cfg = base_cfg;
    cfg.allocation = Allocation::uniform;
    cfg.rounds = 5;
    cfg.compute_cap_flops = 0.5 * static_cast<double>(cfg.layers * cfg.width * cfg.rank) *
                            cfg.flops_per_param_sample * static_cast<double>(cfg.train_samples) /
                            static_cast<double>(cfg.batch_size);
    auto per_device = [&](Method m, std::uint64_t& bits, bool& exact) {
        cfg.method = m;
        const ExperimentSetup setup = prepare_experiment(cfg);
        std::uint64_t expect = 0;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const double s = setup.sparsity[0][l];
            expect += m == Method::lora_baseline
                          ? (cfg.width * cfg.rank + cfg.rank * cfg.width) * cfg.radio.bits_per_parameter
                          : static_cast<std::uint64_t>(static_cast<double>(cfg.width * cfg.rank) * s) *
                                cfg.radio.bits_per_parameter;
            if (m != Method::lora_baseline && s != 0.5) exact = false;
        }
        Simulation sim(setup);
        const RunResult run = sim.run();
        std::size_t senders = 0;
        for (const auto& rm : run.rounds)
            for (auto b : rm.device_bits) {
                if (b == 0) continue;
                ++senders;
                if (b != expect) exact = false;
            }
        if (senders == 0) exact = false;
        bits = expect;
    };
    std::uint64_t prop = 0, lora = 0;
    bool exact = true;
    per_device(Method::proposed, prop, exact);
    per_device(Method::lora_baseline, lora, exact);
    const double ratio = prop ? static_cast<double>(lora) / static_cast<double>(prop) : 0.0;
    r.passed = exact && ratio == 4.0;
    r.detail = "proposed " + std::to_string(prop) + " bits/round/device, LoRA " + std::to_string(lora) +
               ", ratio " + detail::num(ratio) + (exact ? "" : ", measured counts differ from closed form");
    return r;
}

/// Final average eval loss per seed for the ordering check.
struct OrderingTable {
    std::vector<Method> methods;
    std::vector<std::vector<double>> loss;  // [method][seed]
};

inline OrderingTable ordering_runs(const ExperimentConfig& base_cfg) {
    OrderingTable t;
    t.methods = {Method::hard_routing_oracle, Method::proposed, Method::proposed_single_cluster, Method::lori_baseline,
                 Method::lora_baseline};
    for (Method m : t.methods) {
        std::vector<double> row;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            ExperimentConfig cfg = base_cfg;
            cfg.method = m;
            cfg.devices = 8;
            cfg.tasks = 4;
            cfg.rounds = 200;
            cfg.seed = seed;
            row.push_back(run_experiment(cfg).final_avg_loss);
        }
        t.loss.push_back(std::move(row));
    }
    return t;
}

/// 8. hard ≤ proposed ≤ single cluster ≤ LoRI ≤ LoRA on the seed means, proposed < LoRA on every seed.
inline Result multitask_ordering(const ExperimentConfig& base_cfg) {
    Result r{8, criterion_name(8), false, {}, 0.0};
    const OrderingTable t = ordering_runs(base_cfg);
    std::vector<double> means;
    for (const auto& row : t.loss) means.push_back(detail::mean(row));
    bool chain = true;
    for (std::size_t i = 0; i + 1 < means.size(); ++i) chain = chain && means[i] <= means[i + 1];
    bool strict = true;
    for (std::size_t s = 0; s < 5; ++s) strict = strict && t.loss[1][s] < t.loss[4][s];
    r.passed = chain && strict;
    std::ostringstream os;
    for (std::size_t i = 0; i < t.methods.size(); ++i)
        os << (i ? ", " : "") << to_string(t.methods[i]) << " " << detail::fmt("%.5f", means[i]);
    os << "; chain " << (chain ? "holds" : "broken") << ", proposed < lora on every seed: " << (strict ? "yes" : "no");
    r.detail = os.str();
    return r;
}

/// 9. Manual reverse mode against central differences on a 4-layer tanh stack.
inline Result gradient_check() {
    Result r{9, criterion_name(9), false, {}, 0.0};
    constexpr std::size_t w = 16, rank = 4, layers = 4;
    constexpr double step = 1e-5;
    double worst = 0.0;
    for (std::size_t inst = 0; inst < 20; ++inst) {
        const std::uint64_t seed = derive_seed(901, "grad", inst);
        const std::vector<std::size_t> widths(layers + 1, w);
        const FrozenModel base = make_frozen_model(widths, 1.0, derive_seed(seed, "base"));
        Rng rng(derive_seed(seed, "data"));
        Dataset batch;
        for (std::size_t n = 0; n < 4; ++n) {
            Vector x(w), y(w);
            for (double& v : x) v = rng.normal();
            for (double& v : y) v = rng.normal();
            batch.x.push_back(std::move(x));
            batch.y.push_back(std::move(y));
        }
        AdapterStack own, peer;
        std::vector<DenseLoraLayer> lora;
        std::vector<Matrix> delta;
        for (std::size_t l = 0; l < layers; ++l) {
            for (AdapterStack* st : {&own, &peer}) {
                AdapterPair a = init_adapter(w, w, rank, derive_seed(seed, st == &own ? "own" : "peer", l), l);
                Vector h(w);
                for (double& v : h) v = 0.2 + rng.uniform();
                a = refine_projection(std::move(a), h);
                a.expansion = 0.3 * gaussian_matrix(w, rank, derive_seed(seed, "b", l, st == &own));
                for (auto& m : a.mask) m = rng.bernoulli(0.7);
                auto bd = a.expansion.data();
                for (std::size_t i = 0; i < bd.size(); ++i)
                    if (!a.mask[i]) bd[i] = 0.0;
                st->push_back(std::move(a));
            }
            lora.push_back({0.3 * gaussian_matrix(rank, w, derive_seed(seed, "la", l)),
                            0.3 * gaussian_matrix(w, rank, derive_seed(seed, "lb", l))});
            delta.push_back((0.1 / std::sqrt(static_cast<double>(w))) * gaussian_matrix(w, w, derive_seed(seed, "dl", l)));
        }
        ModelView view{&base, {&peer, &own}, Routing{true}, &lora, &delta};
        auto rel_err = [&](const Matrix& g, Matrix& param) {
            Matrix fd(g.rows(), g.cols(), 0.0);
            auto pd = param.data();
            auto fdd = fd.data();
            for (std::size_t i = 0; i < pd.size(); ++i) {
                const double keep = pd[i];
                pd[i] = keep + step;
                const double up = evaluate(view, batch);
                pd[i] = keep - step;
                const double down = evaluate(view, batch);
                pd[i] = keep;
                fdd[i] = (up - down) / (2.0 * step);
            }
            return frobenius_norm(g - fd) / std::max(frobenius_norm(fd), 1e-12);
        };
        const auto ge = batch_gradient(view, batch, {GradientTarget::Kind::entry, 1}).grads;
        const auto gl = batch_gradient(view, batch, {GradientTarget::Kind::lora}).grads;
        const auto gd = batch_gradient(view, batch, {GradientTarget::Kind::delta}).grads;
        for (std::size_t l = 0; l < layers; ++l) {
            worst = std::max(worst, rel_err(ge.expansion[l], own[l].expansion));
            worst = std::max(worst, rel_err(gl.lora_a[l], lora[l].a));
            worst = std::max(worst, rel_err(gl.lora_b[l], lora[l].b));
            worst = std::max(worst, rel_err(gd.delta[l], delta[l]));
        }
    }
    r.passed = worst < 1e-4;
    r.detail = "20 instances x 4 layers (expansion, LoRA A/B, dense), worst relative error " + detail::fmt("%.3g", worst);
    return r;
}

/// 10. Complementary spectra get complementary budgets; no sparsity exceeds 1.
inline Result entropy_allocation() {
    Result r{10, criterion_name(10), false, {}, 0.0};
    constexpr std::size_t w = 16, layers = 6;
    FrozenModel base;
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix eye(w, w, 0.0);
        for (std::size_t i = 0; i < w; ++i) eye(i, i) = 1.0;
        base.layers.push_back(std::move(eye));
    }
    // Flat spectra carry high entropy, geometrically decaying ones low entropy.
    auto covariances = [&](bool flat_on_even) {
        std::vector<Matrix> cs;
        for (std::size_t l = 0; l < layers; ++l) {
            const bool flat = (l % 2 == 0) == flat_on_even;
            const double decay = flat ? 1.0 : (l < 2 ? 0.3 : l < 4 ? 0.5 : 0.7);
            Matrix c(w, w, 0.0);
            for (std::size_t i = 0; i < w; ++i) c(i, i) = std::pow(decay, static_cast<double>(i));
            cs.push_back(std::move(c));
        }
        return cs;
    };
    const std::vector<LayerDims> dims(layers, LayerDims{w, 4});
    std::vector<double> counts[2];
    for (int t = 0; t < 2; ++t) {
        const auto h = layer_entropies(base, covariances(t == 0));
        const LayerBudget b = allocate_sparsity(h, 120, dims);
        for (auto c : b.per_layer_counts) counts[t].push_back(static_cast<double>(c));
    }
    const double rho = detail::spearman(counts[0], counts[1]);

    Rng rng(derive_seed(1001, "fuzz"));
    std::size_t over = 0;
    for (std::size_t f = 0; f < 1000; ++f) {
        const std::size_t l_count = 1 + rng.below(8);
        std::vector<double> h(l_count);
        std::vector<LayerDims> fd(l_count);
        std::size_t capacity = 0;
        for (std::size_t l = 0; l < l_count; ++l) {
            h[l] = 6.0 * rng.uniform();
            fd[l] = {1 + rng.below(64), 1 + rng.below(16)};
            capacity += fd[l].capacity();
        }
        const std::size_t q = l_count + rng.below(2 * capacity);
        const LayerBudget b = allocate_sparsity(h, q, fd);
        for (double s : b.per_layer_sparsity)
            if (!(s > 0.0 && s <= 1.0)) ++over;
    }
    r.passed = rho < 0.0 && over == 0;
    r.detail = "rank correlation " + detail::num(rho) + ", out-of-range sparsities in 1000 fuzzed configs: " +
               std::to_string(over);
    return r;
}

/// 11. Reruns with the same root seed give byte-identical metric files.
inline Result determinism(const ExperimentConfig& base_cfg) {
    Result r{11, criterion_name(11), false, {}, 0.0};
    bool same = true;
    std::size_t bytes = 0;
    for (Method m : {Method::proposed, Method::lori_baseline, Method::lora_baseline}) {
        ExperimentConfig cfg = base_cfg;
        cfg.method = m;
        cfg.rounds = 20;
        cfg.seed = 7;
        std::string first, second;
        for (std::string* out : {&first, &second}) {
            const RunResult run = run_experiment(cfg);
            SummaryBuilder summary;
            summary.add(run);
            *out = metrics_csv(run) + summary.dump() + plan_text(prepare_experiment(cfg));
        }
        same = same && first == second;
        bytes += first.size();
    }
    r.passed = same;
    r.detail = "3 methods x 20 rounds, " + std::to_string(bytes) + " bytes compared, " + (same ? "identical" : "differ");
    return r;
}

inline int criterion_count() { return 11; }

inline Result run_one(int id, const ExperimentConfig& cfg = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
        switch (id) {
            case 1: r = collision_oracle(); break;
            case 2: r = gaussian_orthogonality(); break;
            case 3: r = refined_cross_orthogonality(); break;
            case 4: r = collision_bound(cfg); break;
            case 5: r = power_delay_roundtrip(); break;
            case 6: r = topology_validity(); break;
            case 7: r = communication_accounting(cfg); break;
            case 8: r = multitask_ordering(cfg); break;
            case 9: r = gradient_check(); break;
            case 10: r = entropy_allocation(); break;
            case 11: r = determinism(cfg); break;
            default: throw DomainError("acceptance: no criterion " + std::to_string(id));
        }
    } catch (const Error& e) {
        r.id = id;
        r.name = criterion_name(id);
        r.passed = false;
        r.detail = std::string("error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline std::string format_line(const Result& r) {
    return std::string(r.passed ? "[PASS] " : "[FAIL] ") + std::to_string(r.id) + " " + r.name + ": " + r.detail +
           " (" + detail::fmt("%.1f", r.seconds) + " s)";
}

/// Runs the selected criteria (all when `ids` is empty), one line each.
inline std::vector<Result> run_all(std::ostream& os, const ExperimentConfig& cfg = {}, std::vector<int> ids = {}) {
    if (ids.empty())
        for (int i = 1; i <= criterion_count(); ++i) ids.push_back(i);
    std::vector<Result> out;
    for (int id : ids) {
        out.push_back(run_one(id, cfg));
        os << format_line(out.back()) << std::endl;
    }
    std::size_t passed = 0;
    for (const auto& r : out) passed += r.passed;
    os << passed << "/" << out.size() << " criteria passed" << std::endl;
    return out;
}

}  // namespace soldfl::acceptance
