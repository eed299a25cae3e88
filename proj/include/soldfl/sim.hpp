#pragma once

// Experiment engine: synthetic multi-task regression on a frozen tanh stack,
// per-device adapters, the round loop and its baselines, metric collection.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/collision.hpp"
#include "soldfl/config.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/model.hpp"
#include "soldfl/rng.hpp"
#include "soldfl/sparsity_alloc.hpp"
#include "soldfl/topology.hpp"
#include "soldfl/wireless.hpp"

namespace soldfl {

struct TaskSpec {
    std::size_t task_id = 0;
    std::vector<Matrix> deltas;  // ground-truth per-layer updates, rank <= task_rank
    Vector input_mean;
    std::vector<std::uint8_t> block;  // 1 on the task's own coordinates
    double input_noise = 1.0;
    double input_leak = 1.0;
    double noise_std = 0.0;
};

struct SyntheticWorld {
    FrozenModel base;
    std::vector<TaskSpec> tasks;
    std::vector<Dataset> train;              // per device
    std::vector<Dataset> eval;               // per task
    std::vector<std::vector<Vector>> probe;  // per task, inputs only
};

inline std::uint64_t hash_bytes(std::uint64_t h, const void* data, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_matrix(std::uint64_t h, const Matrix& m) noexcept {
    auto d = m.data();
    return hash_bytes(h, d.data(), d.size() * sizeof(double));
}

inline std::uint64_t hash_model(const FrozenModel& m) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Matrix& w : m.layers) h = hash_matrix(h, w);
    return h;
}

/// The task's labelling network: W0_l + Δ_l per layer.
inline FrozenModel task_truth(const FrozenModel& base, const TaskSpec& task) {
    FrozenModel out = base;
    for (std::size_t l = 0; l < out.depth(); ++l) out.layers[l] = out.layers[l] + task.deltas.at(l);
    return out;
}

inline Vector frozen_forward(const FrozenModel& model, std::span<const double> x) {
    ModelView view;
    view.base = &model;
    return forward(view, x);
}

inline Vector sample_input(const TaskSpec& task, Rng& rng) {
    Vector x(task.input_mean.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = task.input_mean[i] + (task.block[i] ? task.input_noise : task.input_leak) * rng.normal();
    return x;
}

inline Dataset sample_dataset(const TaskSpec& task, const FrozenModel& truth, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    for (std::size_t s = 0; s < n; ++s) {
        Vector x = sample_input(task, rng);
        Vector y = frozen_forward(truth, x);
        if (task.noise_std > 0.0)
            for (double& v : y) v += task.noise_std * rng.normal();
        d.x.push_back(std::move(x));
        d.y.push_back(std::move(y));
    }
    return d;
}

/// Task t owns a contiguous block of input coordinates. Inputs there are
/// input_mean_scale + input_noise·ξ, elsewhere input_leak·ξ; labels come from
/// W0 + Δ_t plus noise_std·ξ.
inline SyntheticWorld generate_tasks(const ExperimentConfig& cfg, std::uint64_t seed) {
    SyntheticWorld w;
    std::vector<std::size_t> widths(cfg.layers + 1, cfg.width);
    w.base = make_frozen_model(widths, cfg.base_gain, derive_seed(seed, "frozen-model"), cfg.tasks, cfg.base_mixing);
    const double scale = cfg.delta_scale / std::sqrt(static_cast<double>(cfg.width * cfg.task_rank));
    for (std::size_t t = 0; t < cfg.tasks; ++t) {
        TaskSpec spec;
        spec.task_id = t;
        spec.input_noise = cfg.input_noise;
        spec.input_leak = cfg.input_leak;
        spec.noise_std = cfg.noise_std;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            Matrix u = gaussian_matrix(cfg.width, cfg.task_rank, derive_seed(seed, "task-delta-u", t, l));
            Matrix v = gaussian_matrix(cfg.width, cfg.task_rank, derive_seed(seed, "task-delta-v", t, l));
            spec.deltas.push_back(scale * matmul(u, transpose(v)));
        }
        spec.input_mean.assign(cfg.width, 0.0);
        spec.block.assign(cfg.width, 0);
        for (std::size_t j = 0; j < cfg.width; ++j) {
            if (j * cfg.tasks / cfg.width != t) continue;
            spec.input_mean[j] = cfg.input_mean_scale;
            spec.block[j] = 1;
        }
        w.tasks.push_back(std::move(spec));
    }
    for (std::size_t i = 0; i < cfg.devices; ++i) {
        const TaskSpec& spec = w.tasks[cfg.task_of(i)];
        w.train.push_back(sample_dataset(spec, task_truth(w.base, spec), cfg.train_samples,
                                         derive_seed(seed, "train", i)));
    }
    for (std::size_t t = 0; t < cfg.tasks; ++t) {
        w.eval.push_back(sample_dataset(w.tasks[t], task_truth(w.base, w.tasks[t]), cfg.eval_samples,
                                        derive_seed(seed, "eval", t)));
        // Probe inputs come from the training pool of the task's lowest-id device.
        const Dataset& pool = w.train[t];
        Rng rng(derive_seed(seed, "probe", t));
        std::vector<Vector> probe;
        for (std::size_t s = 0; s < cfg.probe_samples; ++s) probe.push_back(pool.x[rng.below(pool.size())]);
        w.probe.push_back(std::move(probe));
    }
    return w;
}

inline bool uses_sparse_adapters(Method m) noexcept {
    return m == Method::proposed || m == Method::proposed_single_cluster || m == Method::lori_baseline;
}

inline bool uses_dense_delta(Method m) noexcept {
    return m == Method::full_finetune || m == Method::hard_routing_oracle;
}

inline bool uses_clusters(Method m) noexcept {
    return m == Method::proposed || m == Method::proposed_single_cluster;
}

struct ExperimentSetup {
    ExperimentConfig config;
    SyntheticWorld world;
    std::vector<TaskProfile> profiles;             // per task
    std::vector<std::vector<double>> sparsity;     // [device][layer]
    std::vector<std::vector<std::size_t>> counts;  // [device][layer] active positions
    std::vector<double> payload_params;            // per device, per inner transmission
    DevicePlacement placement;
    ClusterPlan plan;

    TopologyInputs topology(std::uint64_t round) const {
        TopologyInputs in;
        in.sparsity = &sparsity;
        in.payload_params = payload_params;
        in.placement = &placement;
        in.radio = config.radio;
        in.round = round;
        return in;
    }
};

/// Everything that precedes training: data, task profiles, budgets, placement and clusters.
inline ExperimentSetup prepare_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentSetup s;
    s.config = cfg;
    s.world = generate_tasks(cfg, cfg.seed);
    const auto dims = cfg.layer_dims();
    const std::size_t q = cfg.q_budget();
    const bool uniform = cfg.allocation == Allocation::uniform || cfg.method == Method::lori_baseline;
    EntropyOptions eopt;
    eopt.log_base = cfg.entropy_log_base;
    for (std::size_t t = 0; t < cfg.tasks; ++t) {
        ProbeStats stats = probe_covariance(s.world.base, s.world.probe[t], cfg.covariance_mode);
        TaskProfile p;
        p.task_id = t;
        p.per_layer_entropy = layer_entropies(s.world.base, stats.covariance, eopt);
        const std::vector<double> flat(cfg.layers, 0.0);
        p.per_layer_sparsity =
            allocate_sparsity(uniform ? std::span<const double>(flat) : std::span<const double>(p.per_layer_entropy),
                              q, dims)
                .per_layer_sparsity;
        p.mean_activation = std::move(stats.mean_activation);
        s.profiles.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < cfg.devices; ++i) {
        const TaskProfile& p = s.profiles[cfg.task_of(i)];
        std::vector<double> sp;
        std::vector<std::size_t> cnt;
        double payload = 0.0;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            const std::size_t cap = dims[l].capacity();
            if (uses_sparse_adapters(cfg.method)) {
                const std::size_t c = kept_positions(p.per_layer_sparsity[l], cap);
                sp.push_back(static_cast<double>(c) / static_cast<double>(cap));
                cnt.push_back(c);
                payload += static_cast<double>(c);
            } else {
                sp.push_back(1.0);
                cnt.push_back(cap);
                payload += cfg.method == Method::lora_baseline
                               ? static_cast<double>(cfg.width * cfg.rank + cfg.rank * cfg.width)
                               : static_cast<double>(cfg.width * cfg.width);
            }
        }
        s.sparsity.push_back(std::move(sp));
        s.counts.push_back(std::move(cnt));
        s.payload_params.push_back(payload);
    }
    s.placement = DevicePlacement::uniform_disc(cfg.devices, cfg.radio.region_radius_m, derive_seed(cfg.seed, "radio"));

    const TopologyInputs in = s.topology(0);
    switch (cfg.method) {
        case Method::proposed:
            s.plan = agnes_cluster(in, cfg.cluster);
            break;
        case Method::proposed_single_cluster:
            s.plan = single_cluster(in);
            break;
        case Method::hard_routing_oracle: {
            s.plan.device_count = cfg.devices;
            for (std::size_t t = 0; t < cfg.tasks; ++t) {
                std::vector<std::size_t> group;
                for (std::size_t i = 0; i < cfg.devices; ++i)
                    if (cfg.task_of(i) == t) group.push_back(i);
                s.plan.clusters.push_back(std::move(group));
            }
            break;
        }
        default:
            s.plan.device_count = cfg.devices;
            for (std::size_t i = 0; i < cfg.devices; ++i) s.plan.clusters.push_back({i});
            break;
    }
    s.plan.connection.assign(cfg.devices * cfg.devices, 0);
    return s;
}

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<double> task_loss;
    double avg_loss = 0.0;
    std::vector<std::uint64_t> device_bits;  // inner-phase payload sent by each device
    std::uint64_t total_bits = 0;
    std::uint64_t exchange_bits = 0;  // inter-cluster traffic, including relays to cluster members
    double energy_j = 0.0;            // cumulative Σ power x delay
    std::vector<double> collision;    // per layer, worst aggregation group
    bool has_bound = false;
    std::vector<double> bound_lhs;  // per layer, summed over clusters
    std::vector<double> bound_rhs;
    std::size_t bound_checks = 0;
    std::size_t bound_violations = 0;
    std::size_t links = 0;
    std::size_t dropped_links = 0;
    double wall_time_s = 0.0;  // never written to metric files
};

struct RunResult {
    ExperimentConfig config;
    std::vector<RoundMetrics> rounds;
    std::vector<double> initial_task_loss;  // before any training
    std::vector<double> final_task_loss;
    double final_avg_loss = 0.0;
    std::vector<AdapterBank> banks;  // per device, sparse methods only
    ClusterPlan plan;
    std::vector<TaskProfile> profiles;
    std::vector<std::vector<double>> device_sparsity;
    std::vector<std::size_t> trainable_params;  // per device
    std::uint64_t frozen_hash_before = 0;
    std::uint64_t frozen_hash_after = 0;
};

struct DeviceState {
    std::size_t id = 0;
    std::size_t task = 0;
    AdapterStack own;
    std::map<std::size_t, AdapterStack> peers;  // read-only copies by origin
    std::vector<DenseLoraLayer> lora;
    std::vector<Matrix> delta;
    std::vector<Matrix> last_gradient;  // masked ∂F/∂B of the latest step
};

/// Directed links where each ordered pair appears with probability p, then
/// shed per device until the power cap holds.
inline ClusterPlan random_connection(std::size_t n, double p, const TopologyInputs& in, std::uint64_t seed) {
    Rng rng(seed);
    ClusterPlan plan;
    plan.device_count = n;
    plan.connection.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> peers;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && rng.bernoulli(p)) peers.push_back(j);
        while (!peers.empty()) {
            auto rep = check_feasibility(i, peers, in.payload_params.at(i), *in.placement, in.round, in.radio);
            if (rep.feasible) {
                for (const auto& l : rep.links) {
                    plan.connection[i * n + l.to] = 1;
                    plan.links.push_back({i, l.to, l.power, l.delay, in.payload_params[i]});
                }
                break;
            }
            auto worst = std::max_element(rep.links.begin(), rep.links.end(),
                                          [](const LinkReport& a, const LinkReport& b) { return a.power < b.power; });
            peers.erase(std::find(peers.begin(), peers.end(), worst->to));
            ++plan.dropped_links;
        }
    }
    return plan;
}

/// The links used for inner aggregation in `round` (1-based).
inline ClusterPlan round_connection(const ExperimentSetup& s, std::size_t round) {
    const ExperimentConfig& cfg = s.config;
    const TopologyInputs in = s.topology(round);
    switch (cfg.method) {
        case Method::proposed:
        case Method::proposed_single_cluster:
        case Method::hard_routing_oracle:
            return build_connection(s.plan, ExchangePhase::inner_aggregate, in);
        default:
            return random_connection(cfg.devices, cfg.link_probability, in, derive_seed(cfg.seed, "random-links", 0, round));
    }
}

class Simulation {
public:
    explicit Simulation(ExperimentSetup setup) : s_(std::move(setup)), cfg_(s_.config) { init_devices(); }

    RunResult run() {
        RunResult out;
        out.config = cfg_;
        out.frozen_hash_before = hash_model(s_.world.base);
        out.initial_task_loss = evaluate_tasks();
        out.final_task_loss = out.initial_task_loss;
        double energy = 0.0;
        g_hat_.assign(cfg_.layers, 0.0);
        p_hat_.assign(cfg_.layers, 0.0);
        for (std::size_t round = 1; round <= cfg_.rounds; ++round) {
            RoundMetrics m;
            m.round = round;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                local_updates(round);
                ClusterPlan conn = round_connection(round);
                m.links = conn.link_count();
                m.dropped_links = conn.dropped_links;
                account(conn, m, energy);
                collision_stats(conn, m);
                if (uses_clusters(cfg_.method)) bound_check(m);
                aggregate(conn);
                if (cfg_.method == Method::proposed && s_.plan.clusters.size() > 1 &&
                    round % cfg_.cluster.inner_rounds_per_exchange == 0)
                    exchange(round, m, energy);
                m.energy_j = energy;
                m.task_loss = evaluate_tasks();
            } catch (const NumericFailure& e) {
                throw NumericFailure("round " + std::to_string(round) + ", adapter: " + e.what());
            }
            m.avg_loss = mean(m.task_loss);
            m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            out.final_task_loss = m.task_loss;
            out.rounds.push_back(std::move(m));
        }
        out.final_avg_loss = mean(out.final_task_loss);
        out.frozen_hash_after = hash_model(s_.world.base);
        out.plan = s_.plan;
        out.profiles = s_.profiles;
        out.device_sparsity = s_.sparsity;
        for (const auto& d : devices_) {
            out.trainable_params.push_back(trainable_params(d));
            if (!uses_sparse_adapters(cfg_.method)) continue;
            AdapterBank bank;
            bank.upsert({d.id, d.task, d.own});
            for (const auto& [origin, stack] : d.peers) bank.upsert({origin, cfg_.task_of(origin), stack});
            out.banks.push_back(std::move(bank));
        }
        return out;
    }

    const std::vector<DeviceState>& devices() const noexcept { return devices_; }
    const ExperimentSetup& setup() const noexcept { return s_; }

private:
    static double mean(const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }

    Routing routing() const {
        Routing r;
        r.refined = uses_clusters(cfg_.method) && cfg_.refinement;
        r.top_k = cfg_.method == Method::lori_baseline ? cfg_.rank : cfg_.effective_top_k();
        r.ranking = cfg_.topk_ranking;
        return r;
    }

    bool mergeable() const { return routing().top_k >= cfg_.rank; }

    void init_devices() {
        const std::size_t w = cfg_.width, r = cfg_.rank;
        for (std::size_t i = 0; i < cfg_.devices; ++i) {
            DeviceState d;
            d.id = i;
            d.task = cfg_.task_of(i);
            if (uses_sparse_adapters(cfg_.method)) {
                for (std::size_t l = 0; l < cfg_.layers; ++l) {
                    AdapterPair a = init_adapter(w, w, r, derive_seed(cfg_.seed, "projection", i, l), l);
                    if (routing().refined) a = refine_projection(std::move(a), s_.profiles[d.task].mean_activation[l]);
                    d.own.push_back(std::move(a));
                }
            } else if (cfg_.method == Method::lora_baseline) {
                for (std::size_t l = 0; l < cfg_.layers; ++l)
                    d.lora.push_back({gaussian_matrix(r, w, derive_seed(cfg_.seed, "lora-projection", 0, l)),
                                      Matrix(w, r, 0.0)});
            } else {
                for (std::size_t l = 0; l < cfg_.layers; ++l) d.delta.emplace_back(w, w, 0.0);
            }
            devices_.push_back(std::move(d));
        }
    }

    std::size_t trainable_params(const DeviceState& d) const {
        std::size_t n = 0;
        for (const auto& a : d.own) n += a.active_count();
        for (const auto& l : d.lora) n += l.a.size() + l.b.size();
        for (const auto& m : d.delta) n += m.size();
        return n;
    }

    /// Σ_e (B_e ⊙ M_e) P_e per layer over the given stacks, in the given order.
    std::vector<Matrix> merged_delta(const std::vector<const AdapterStack*>& stacks) const {
        const Routing rt = routing();
        std::vector<Matrix> out;
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            Matrix acc(cfg_.width, cfg_.width, 0.0);
            for (const AdapterStack* st : stacks) {
                const AdapterPair& a = (*st)[l];
                const Matrix prod = matmul(a.expansion, detail::entry_projection(a, rt));
                auto ad = acc.data();
                auto pd = prod.data();
                for (std::size_t k = 0; k < ad.size(); ++k) ad[k] += pd[k];
            }
            out.push_back(std::move(acc));
        }
        return out;
    }

    Dataset sample_batch(const Dataset& pool, std::uint64_t seed) const {
        Rng rng(seed);
        Dataset b;
        for (std::size_t n = 0; n < cfg_.batch_size; ++n) {
            const auto idx = rng.below(pool.size());
            b.x.push_back(pool.x[idx]);
            b.y.push_back(pool.y[idx]);
        }
        return b;
    }

    static void check_finite(const Matrix& g, std::size_t layer) {
        if (!g.all_finite()) throw NumericFailure("non-finite gradient in layer " + std::to_string(layer));
    }

    static void sgd(Matrix& param, const Matrix& grad, double lr) {
        auto pd = param.data();
        auto gd = grad.data();
        for (std::size_t k = 0; k < pd.size(); ++k) pd[k] -= lr * gd[k];
    }

    void local_updates(std::size_t round) {
        const Routing rt = routing();
        for (DeviceState& d : devices_) {
            const Dataset& pool = s_.world.train[d.id];
            std::vector<const AdapterStack*> peers;
            for (const auto& [origin, stack] : d.peers) peers.push_back(&stack);
            std::optional<std::vector<Matrix>> frozen;
            if (uses_sparse_adapters(cfg_.method) && mergeable() && !peers.empty()) frozen = merged_delta(peers);

            for (std::size_t step = 0; step < cfg_.local_steps; ++step) {
                const Dataset batch =
                    sample_batch(pool, derive_seed(cfg_.seed, "batch", d.id, (round - 1) * cfg_.local_steps + step));
                if (uses_sparse_adapters(cfg_.method)) {
                    const double lr =
                        cfg_.method == Method::lori_baseline ? cfg_.lori_learning_rate : cfg_.learning_rate;
                    LocalUpdateResult res = frozen ? local_update(d.own, s_.world.base, batch, lr, rt, {}, &*frozen)
                                                   : local_update(d.own, s_.world.base, batch, lr, rt, peers);
                    d.last_gradient = std::move(res.masked_gradient);
                    if (round == 1 && step == 0)
                        for (std::size_t l = 0; l < cfg_.layers; ++l)
                            d.own[l] = build_mask(std::move(d.own[l]), s_.sparsity[d.id][l], cfg_.mask_select);
                } else if (cfg_.method == Method::lora_baseline) {
                    ModelView view{&s_.world.base, {}, rt, &d.lora};
                    BatchGradient bg = batch_gradient(view, batch, {GradientTarget::Kind::lora});
                    for (std::size_t l = 0; l < cfg_.layers; ++l) {
                        check_finite(bg.grads.lora_a[l], l);
                        check_finite(bg.grads.lora_b[l], l);
                        sgd(d.lora[l].a, bg.grads.lora_a[l], cfg_.lora_learning_rate);
                        sgd(d.lora[l].b, bg.grads.lora_b[l], cfg_.lora_learning_rate);
                    }
                } else {
                    ModelView view{&s_.world.base, {}, rt, nullptr, &d.delta};
                    BatchGradient bg = batch_gradient(view, batch, {GradientTarget::Kind::delta});
                    for (std::size_t l = 0; l < cfg_.layers; ++l) {
                        check_finite(bg.grads.delta[l], l);
                        sgd(d.delta[l], bg.grads.delta[l], cfg_.dense_learning_rate);
                    }
                }
            }
        }
    }

    ClusterPlan round_connection(std::size_t round) const { return soldfl::round_connection(s_, round); }

    std::uint64_t payload_bits(const DeviceState& d) const {
        std::uint64_t params = 0;
        for (const auto& a : d.own) params += a.active_count();
        for (const auto& l : d.lora) params += l.a.size() + l.b.size();
        for (const auto& m : d.delta) params += m.size();
        return params * cfg_.radio.bits_per_parameter;
    }

    void account(const ClusterPlan& conn, RoundMetrics& m, double& energy) const {
        m.device_bits.assign(cfg_.devices, 0);
        for (std::size_t i = 0; i < cfg_.devices; ++i) {
            bool sends = false;
            for (std::size_t j = 0; j < cfg_.devices; ++j) sends = sends || conn.u(i, j);
            if (sends) m.device_bits[i] = payload_bits(devices_[i]);
            m.total_bits += m.device_bits[i];
        }
        for (const Link& l : conn.links) energy += l.power * l.delay;
    }

    std::vector<std::size_t> receive_group(const ClusterPlan& conn, std::size_t i) const {
        std::vector<std::size_t> g{i};
        for (std::size_t j = 0; j < cfg_.devices; ++j)
            if (j != i && conn.u(j, i)) g.push_back(j);
        std::sort(g.begin(), g.end());
        return g;
    }

    double device_sparsity(std::size_t i, std::size_t l) const {
        return devices_[i].own.empty() ? 1.0 : devices_[i].own[l].sparsity_rate;
    }

    void collision_stats(const ClusterPlan& conn, RoundMetrics& m) const {
        m.collision.assign(cfg_.layers, 0.0);
        for (std::size_t i = 0; i < cfg_.devices; ++i) {
            const auto group = receive_group(conn, i);
            if (group.size() < 2) continue;
            for (std::size_t l = 0; l < cfg_.layers; ++l) {
                std::vector<double> s;
                for (std::size_t j : group) s.push_back(device_sparsity(j, l));
                m.collision[l] = std::max(m.collision[l], collision_rate(s));
            }
        }
    }

    void bound_check(RoundMetrics& m) {
        m.has_bound = true;
        m.bound_lhs.assign(cfg_.layers, 0.0);
        m.bound_rhs.assign(cfg_.layers, 0.0);
        const Routing rt = routing();
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            for (const DeviceState& d : devices_) {
                const Matrix& a = detail::entry_projection(d.own[l], rt);
                g_hat_[l] = std::max(g_hat_[l], frobenius_norm(matmul(d.last_gradient[l], a)));
            }
            std::vector<std::vector<BoundMember>> groups;
            for (const auto& cluster : s_.plan.clusters) {
                if (cluster.size() < 2) continue;
                std::vector<BoundMember> members;
                for (std::size_t i : cluster) {
                    const AdapterPair& a = devices_[i].own[l];
                    members.push_back({&a.expansion, &detail::entry_projection(a, rt), a.sparsity_rate, 0.0});
                }
                for (double p : mean_projection_norms(members)) p_hat_[l] = std::max(p_hat_[l], p);
                groups.push_back(std::move(members));
            }
            for (const auto& members : groups) {
                const BoundEstimate est = theorem1_bound(members, g_hat_[l], p_hat_[l]);
                m.bound_lhs[l] += est.lhs;
                m.bound_rhs[l] += est.rhs;
                ++m.bound_checks;
                if (!est.holds()) ++m.bound_violations;
            }
        }
    }

    void aggregate(const ClusterPlan& conn) {
        const std::size_t n = cfg_.devices;
        std::vector<std::size_t> volume;
        for (std::size_t i = 0; i < n; ++i) volume.push_back(s_.world.train[i].size());

        if (uses_sparse_adapters(cfg_.method)) {
            std::vector<std::vector<Matrix>> next(n);
            std::vector<std::vector<std::size_t>> groups(n);
            for (std::size_t i = 0; i < n; ++i) {
                groups[i] = receive_group(conn, i);
                if (groups[i].size() < 2) continue;
                std::vector<std::size_t> vol;
                for (std::size_t j : groups[i]) vol.push_back(volume[j]);
                const auto alpha = volume_weights(vol);
                for (std::size_t l = 0; l < cfg_.layers; ++l) {
                    std::vector<const Matrix*> bs;
                    std::vector<const Mask*> ms;
                    for (std::size_t j : groups[i]) {
                        bs.push_back(&devices_[j].own[l].expansion);
                        ms.push_back(&devices_[j].own[l].mask);
                    }
                    next[i].push_back(aggregate_expansions(bs, ms, alpha));
                }
            }
            // Peer copies come from the pre-aggregation adapters, so take them before overwriting.
            std::vector<std::map<std::size_t, AdapterStack>> incoming(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (next[i].empty()) continue;
                for (std::size_t j : groups[i]) {
                    if (j == i) continue;
                    AdapterStack copy = devices_[j].own;
                    for (std::size_t l = 0; l < cfg_.layers; ++l) copy[l].expansion = masked(next[i][l], copy[l].mask);
                    incoming[i].emplace(j, std::move(copy));
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (next[i].empty()) continue;
                for (std::size_t l = 0; l < cfg_.layers; ++l)
                    devices_[i].own[l].expansion = masked(next[i][l], devices_[i].own[l].mask);
                for (auto& [origin, stack] : incoming[i]) devices_[i].peers[origin] = std::move(stack);
            }
            return;
        }

        auto average = [&](auto member) {
            std::vector<std::vector<Matrix>> next(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto group = receive_group(conn, i);
                if (group.size() < 2) continue;
                std::vector<std::size_t> vol;
                for (std::size_t j : group) vol.push_back(volume[j]);
                const auto alpha = volume_weights(vol);
                for (std::size_t l = 0; l < cfg_.layers; ++l) {
                    const Matrix& ref = member(devices_[i], l);
                    Matrix acc(ref.rows(), ref.cols(), 0.0);
                    for (std::size_t g = 0; g < group.size(); ++g) {
                        auto ad = acc.data();
                        auto sd = member(devices_[group[g]], l).data();
                        for (std::size_t k = 0; k < ad.size(); ++k) ad[k] += alpha[g] * sd[k];
                    }
                    next[i].push_back(std::move(acc));
                }
            }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t l = 0; l < next[i].size(); ++l) member(devices_[i], l) = std::move(next[i][l]);
        };
        if (cfg_.method == Method::lora_baseline) {
            average([](DeviceState& d, std::size_t l) -> Matrix& { return d.lora[l].a; });
            average([](DeviceState& d, std::size_t l) -> Matrix& { return d.lora[l].b; });
        } else {
            average([](DeviceState& d, std::size_t l) -> Matrix& { return d.delta[l]; });
        }
    }

    static Matrix masked(const Matrix& b, const Mask& mask) {
        Matrix out = b;
        auto od = out.data();
        for (std::size_t k = 0; k < od.size(); ++k)
            if (!mask[k]) od[k] = 0.0;
        return out;
    }

    /// Representatives forward their cluster's adapters; every member of the
    /// receiving cluster stores them read-only.
    void exchange(std::size_t round, RoundMetrics& m, double& energy) {
        const TopologyInputs in = s_.topology(round);
        const ClusterPlan ex = build_connection(s_.plan, ExchangePhase::inter_exchange, in);
        for (const Link& l : ex.links) energy += l.power * l.delay;
        const std::size_t n = cfg_.devices;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (!ex.u(i, j)) continue;
                const auto& src_cluster = s_.plan.clusters[s_.plan.cluster_of(i)];
                const auto& dst_cluster = s_.plan.clusters[s_.plan.cluster_of(j)];
                std::map<std::size_t, AdapterStack> parcel;
                std::uint64_t bits = 0;
                for (std::size_t origin : src_cluster) {
                    const AdapterStack* st = origin == i ? &devices_[i].own : nullptr;
                    if (!st) {
                        auto it = devices_[i].peers.find(origin);
                        if (it == devices_[i].peers.end()) continue;
                        st = &it->second;
                    }
                    for (const auto& a : *st) bits += a.active_count() * cfg_.radio.bits_per_parameter;
                    parcel.emplace(origin, *st);
                }
                m.exchange_bits += bits * dst_cluster.size();
                for (std::size_t member : dst_cluster)
                    for (const auto& [origin, st] : parcel) devices_[member].peers[origin] = st;
            }
        }
    }

    std::uint64_t model_fingerprint(const DeviceState& d) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&](std::size_t origin, const AdapterStack& st) {
            h = hash_bytes(h, &origin, sizeof origin);
            for (const auto& a : st) {
                h = hash_bytes(h, &a.seed, sizeof a.seed);
                h = hash_matrix(h, a.expansion);
                if (a.refinement) h = hash_bytes(h, a.refinement->data(), a.refinement->size() * sizeof(double));
            }
        };
        bool own_done = false;
        for (const auto& [origin, st] : d.peers) {
            if (!own_done && origin > d.id) {
                mix(d.id, d.own);
                own_done = true;
            }
            mix(origin, st);
        }
        if (!own_done) mix(d.id, d.own);
        return h;
    }

    /// Loss of device d's model on every task's eval split.
    std::vector<double> device_losses(const DeviceState& d) const {
        const Routing rt = routing();
        ModelView view{&s_.world.base, {}, rt};
        std::optional<std::vector<Matrix>> merged;
        if (uses_sparse_adapters(cfg_.method)) {
            std::vector<const AdapterStack*> stacks;
            bool own_done = false;
            for (const auto& [origin, st] : d.peers) {
                if (!own_done && origin > d.id) {
                    stacks.push_back(&d.own);
                    own_done = true;
                }
                stacks.push_back(&st);
            }
            if (!own_done) stacks.push_back(&d.own);
            if (mergeable()) {
                merged = merged_delta(stacks);
                view.delta = &*merged;
            } else {
                view.entries = stacks;
            }
        } else if (cfg_.method == Method::lora_baseline) {
            view.lora = &d.lora;
        } else {
            view.delta = &d.delta;
        }
        std::vector<double> out;
        for (std::size_t t = 0; t < cfg_.tasks; ++t) {
            if (cfg_.method == Method::hard_routing_oracle && d.task != t) {
                out.push_back(0.0);
                continue;
            }
            out.push_back(evaluate(view, s_.world.eval[t]));
        }
        return out;
    }

    /// Per-task loss averaged over the devices that serve the task: every
    /// device for shared-model methods, the task's own devices for the oracle.
    std::vector<double> evaluate_tasks() const {
        std::vector<double> sum(cfg_.tasks, 0.0);
        std::vector<std::size_t> served(cfg_.tasks, 0);
        std::map<std::uint64_t, std::vector<double>> cache;
        for (const DeviceState& d : devices_) {
            std::vector<double> losses;
            if (uses_sparse_adapters(cfg_.method)) {
                const std::uint64_t key = model_fingerprint(d);
                auto it = cache.find(key);
                if (it == cache.end()) it = cache.emplace(key, device_losses(d)).first;
                losses = it->second;
            } else {
                losses = device_losses(d);
            }
            for (std::size_t t = 0; t < cfg_.tasks; ++t) {
                if (cfg_.method == Method::hard_routing_oracle && d.task != t) continue;
                sum[t] += losses[t];
                ++served[t];
            }
        }
        for (std::size_t t = 0; t < cfg_.tasks; ++t) sum[t] /= static_cast<double>(std::max<std::size_t>(1, served[t]));
        return sum;
    }

    ExperimentSetup s_;
    const ExperimentConfig& cfg_;
    std::vector<DeviceState> devices_;
    std::vector<double> g_hat_;
    std::vector<double> p_hat_;
};

/// Runs the configured method end to end.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    Simulation sim(prepare_experiment(cfg));
    return sim.run();
}

/// Same engine, restricted to the comparison methods.
inline RunResult run_baseline(const ExperimentConfig& cfg) {
    if (cfg.method == Method::proposed) throw ConfigError("experiment.method", "run_baseline needs a baseline method");
    return run_experiment(cfg);
}

struct InterferenceReport {
    bool degenerate = false;
    double matched_refined = 0.0;
    double mismatched_refined = 0.0;
    double matched_raw = 0.0;
    double mismatched_raw = 0.0;

    double ratio_refined() const { return matched_refined > 0.0 ? mismatched_refined / matched_refined : 0.0; }
    double ratio_raw() const { return matched_raw > 0.0 ? mismatched_raw / matched_raw : 0.0; }
};

/// Mean |(B⊙M) route(h)| of the bank's adapters from tasks a and b, on layer
/// inputs of their own task (matched) and of the other task (mismatched).
/// "refined" routes with the refined projection and top-k, "raw" with the
/// plain projection and every component. `inputs_a` and `inputs_b` are model
/// inputs from each task's distribution.
inline InterferenceReport interference_probe(const AdapterBank& bank, const FrozenModel& base, std::size_t task_a,
                                             std::size_t task_b, const std::vector<Vector>& inputs_a,
                                             const std::vector<Vector>& inputs_b, std::size_t layer,
                                             std::size_t top_k, TopkRanking ranking = TopkRanking::magnitude) {
    InterferenceReport rep;
    bool has_a = false, has_b = false;
    for (const auto& e : bank.entries()) {
        has_a = has_a || e.origin_task == task_a;
        has_b = has_b || e.origin_task == task_b;
    }
    if (!has_a || !has_b || task_a == task_b || inputs_a.empty() || inputs_b.empty()) {
        rep.degenerate = true;
        return rep;
    }
    auto layer_inputs = [&](const std::vector<Vector>& xs) {
        std::vector<Vector> out;
        for (const auto& x : xs) out.push_back(frozen_layer_inputs(base, x).at(layer));
        return out;
    };
    const auto ha = layer_inputs(inputs_a);
    const auto hb = layer_inputs(inputs_b);
    auto contribution = [&](const AdapterPair& ad, const Vector& h, bool refined) {
        if (refined && !ad.refined_projection) throw StateError("interference_probe: entry lacks refinement");
        const Vector z = matvec(refined ? *ad.refined_projection : ad.projection, h);
        return norm2(matvec(ad.expansion, refined ? topk(z, top_k, ranking) : z));
    };
    double n_matched = 0.0, n_mismatched = 0.0;
    for (const auto& e : bank.entries()) {
        if (e.origin_task != task_a && e.origin_task != task_b) continue;
        const AdapterPair& ad = e.layers.at(layer);
        const auto& own = e.origin_task == task_a ? ha : hb;
        const auto& other = e.origin_task == task_a ? hb : ha;
        for (const auto& h : own) {
            rep.matched_refined += contribution(ad, h, true);
            rep.matched_raw += contribution(ad, h, false);
            n_matched += 1.0;
        }
        for (const auto& h : other) {
            rep.mismatched_refined += contribution(ad, h, true);
            rep.mismatched_raw += contribution(ad, h, false);
            n_mismatched += 1.0;
        }
    }
    rep.matched_refined /= n_matched;
    rep.matched_raw /= n_matched;
    rep.mismatched_refined /= n_mismatched;
    rep.mismatched_raw /= n_mismatched;
    return rep;
}

}  // namespace soldfl
