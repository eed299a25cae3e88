#pragma once

// Collision-capped agglomerative clustering, connection matrices for the
// inner-aggregation and inter-cluster exchange phases, and masked aggregation.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soldfl/adapter.hpp"
#include "soldfl/collision.hpp"
#include "soldfl/error.hpp"
#include "soldfl/linalg.hpp"
#include "soldfl/wireless.hpp"

namespace soldfl {

enum class Linkage { collision, distance };
enum class ExchangePhase { inner_aggregate, inter_exchange };

struct ClusterConfig {
    double s_max = 0.1;
    std::size_t inner_rounds_per_exchange = 5;
    Linkage linkage = Linkage::collision;

    void validate() const {
        if (!(s_max >= 0.0 && s_max <= 1.0)) throw ConfigError("cluster.s_max", "must lie in [0, 1]");
        if (inner_rounds_per_exchange == 0) throw ConfigError("cluster.inner_rounds_per_exchange", "must be >= 1");
    }
};

struct Link {
    std::size_t from = 0;
    std::size_t to = 0;
    double power = 0.0;
    double delay = 0.0;
    double params = 0.0;  // parameters carried
};

struct ClusterPlan {
    std::size_t device_count = 0;
    std::vector<std::vector<std::size_t>> clusters;  // sorted members, clusters ordered by smallest member
    ExchangePhase phase = ExchangePhase::inner_aggregate;
    std::vector<std::uint8_t> connection;  // device_count², row-major, U[i][j] = 1 when i sends to j
    std::vector<Link> links;
    std::vector<std::pair<std::size_t, std::size_t>> skipped;  // cluster index pairs with no feasible link
    std::size_t dropped_links = 0;                              // inner links shed to meet the power cap

    std::size_t cluster_of(std::size_t device) const {
        for (std::size_t c = 0; c < clusters.size(); ++c)
            if (std::find(clusters[c].begin(), clusters[c].end(), device) != clusters[c].end()) return c;
        throw DomainError("cluster_of: unknown device " + std::to_string(device));
    }

    std::uint8_t u(std::size_t i, std::size_t j) const { return connection.at(i * device_count + j); }

    std::size_t link_count() const {
        return static_cast<std::size_t>(std::count(connection.begin(), connection.end(), std::uint8_t{1}));
    }
};

/// Inputs shared by clustering and connection building.
struct TopologyInputs {
    const std::vector<std::vector<double>>* sparsity = nullptr;  // [device][layer]
    std::vector<double> payload_params;                          // per device, parameters per inner transmission
    const DevicePlacement* placement = nullptr;
    RadioConfig radio{};
    std::uint64_t round = 0;
};

/// True when every member can reach every other member within the radio caps.
inline bool mesh_feasible(std::span<const std::size_t> members, const TopologyInputs& in) {
    for (std::size_t i : members) {
        std::vector<std::size_t> peers;
        for (std::size_t j : members)
            if (j != i) peers.push_back(j);
        if (!check_feasibility(i, peers, in.payload_params.at(i), *in.placement, in.round, in.radio).feasible)
            return false;
    }
    return true;
}

namespace detail {

inline double mean_pair_distance(std::span<const std::size_t> members, const DevicePlacement& placement) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b, ++pairs) total += placement.distance(members[a], members[b]);
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

inline void sort_clusters(std::vector<std::vector<std::size_t>>& clusters) {
    for (auto& c : clusters) std::sort(c.begin(), c.end());
    std::sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
}

}  // namespace detail

/// Agglomerative nesting from singletons. Each step merges the admissible pair
/// with the smallest linkage score (ties: smallest pair of minimum ids). A merge
/// is admissible when the union's worst-layer collision rate is at most s_max
/// and its full mesh is radio-feasible.
inline ClusterPlan agnes_cluster(const TopologyInputs& in, const ClusterConfig& cfg) {
    cfg.validate();
    if (!in.sparsity || !in.placement) throw DomainError("agnes_cluster: missing inputs");
    const std::size_t n = in.sparsity->size();
    if (n == 0) throw DomainError("agnes_cluster: need at least one device");
    if (in.payload_params.size() != n || in.placement->size() != n)
        throw DimensionError("agnes_cluster: per-device inputs disagree in length");

    std::vector<std::vector<std::size_t>> clusters(n);
    for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};

    for (;;) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_a = 0, best_b = 0;
        bool found = false;
        for (std::size_t a = 0; a < clusters.size(); ++a) {
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                std::vector<std::size_t> merged = clusters[a];
                merged.insert(merged.end(), clusters[b].begin(), clusters[b].end());
                std::sort(merged.begin(), merged.end());
                const double rate = group_collision(merged, *in.sparsity).max_rate;
                if (rate > cfg.s_max) continue;
                const double score =
                    cfg.linkage == Linkage::collision ? rate : detail::mean_pair_distance(merged, *in.placement);
                // Clusters are kept ordered by smallest member, so scanning (a, b) in
                // order and requiring a strict improvement realizes the tie-break.
                if (found && !(score < best)) continue;
                if (!mesh_feasible(merged, in)) continue;
                best = score;
                best_a = a;
                best_b = b;
                found = true;
            }
        }
        if (!found) break;
        clusters[best_a].insert(clusters[best_a].end(), clusters[best_b].begin(), clusters[best_b].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
        detail::sort_clusters(clusters);
    }

    ClusterPlan plan;
    plan.device_count = n;
    plan.clusters = std::move(clusters);
    detail::sort_clusters(plan.clusters);
    plan.connection.assign(n * n, 0);
    return plan;
}

/// Every device in one cluster; throws InfeasibleError naming the binding constraint.
inline ClusterPlan single_cluster(const TopologyInputs& in) {
    const std::size_t n = in.payload_params.size();
    ClusterPlan plan;
    plan.device_count = n;
    plan.clusters.emplace_back(n);
    std::iota(plan.clusters.front().begin(), plan.clusters.front().end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> peers;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) peers.push_back(j);
        auto rep = check_feasibility(i, peers, in.payload_params[i], *in.placement, in.round, in.radio);
        if (!rep.feasible) throw InfeasibleError("single cluster infeasible: " + rep.binding.front());
    }
    plan.connection.assign(n * n, 0);
    return plan;
}

namespace detail {

/// Links from `from` to `peers` at optimal power for this fanout.
inline std::vector<Link> power_links(std::size_t from, std::span<const std::size_t> peers, double params,
                                     const TopologyInputs& in, bool& feasible) {
    auto rep = check_feasibility(from, peers, params, *in.placement, in.round, in.radio);
    feasible = rep.feasible;
    std::vector<Link> out;
    for (const auto& l : rep.links) out.push_back({from, l.to, l.power, l.delay, params});
    return out;
}

}  // namespace detail

/// Connection matrix and per-link powers for one round.
///
/// inner_aggregate: full mesh inside each cluster. When this round's fading
/// leaves a device over its power cap, its most expensive links are shed one
/// at a time until it fits; the count is kept in dropped_links.
///
/// inter_exchange: for each cluster pair one bidirectional link between
/// representatives, trying member pairs in lexicographic order starting from
/// the lowest ids. Each direction carries the sender cluster's payload.
inline ClusterPlan build_connection(ClusterPlan plan, ExchangePhase phase, const TopologyInputs& in) {
    const std::size_t n = plan.device_count;
    plan.phase = phase;
    plan.connection.assign(n * n, 0);
    plan.links.clear();
    plan.skipped.clear();
    plan.dropped_links = 0;

    if (phase == ExchangePhase::inner_aggregate) {
        for (const auto& cluster : plan.clusters) {
            for (std::size_t i : cluster) {
                std::vector<std::size_t> peers;
                for (std::size_t j : cluster)
                    if (j != i) peers.push_back(j);
                while (!peers.empty()) {
                    bool ok = false;
                    auto links = detail::power_links(i, peers, in.payload_params.at(i), in, ok);
                    if (ok) {
                        for (const auto& l : links) {
                            plan.connection[i * n + l.to] = 1;
                            plan.links.push_back(l);
                        }
                        break;
                    }
                    auto worst = std::max_element(links.begin(), links.end(),
                                                  [](const Link& a, const Link& b) { return a.power < b.power; });
                    peers.erase(std::find(peers.begin(), peers.end(), worst->to));
                    ++plan.dropped_links;
                }
            }
        }
        return plan;
    }

    std::vector<double> cluster_payload(plan.clusters.size(), 0.0);
    for (std::size_t c = 0; c < plan.clusters.size(); ++c)
        for (std::size_t i : plan.clusters[c]) cluster_payload[c] += in.payload_params.at(i);

    // Exchange destinations per device, so fanout and power sums account for every link a device carries.
    std::vector<std::vector<std::size_t>> dest(n);
    std::vector<double> sent(n, 0.0);
    auto fits = [&](std::size_t from, std::size_t to, double params) {
        std::vector<std::size_t> peers = dest[from];
        peers.push_back(to);
        bool ok = false;
        detail::power_links(from, peers, std::max(sent[from], params), in, ok);
        return ok;
    };
    for (std::size_t a = 0; a < plan.clusters.size(); ++a) {
        for (std::size_t b = a + 1; b < plan.clusters.size(); ++b) {
            bool linked = false;
            for (std::size_t i : plan.clusters[a]) {
                for (std::size_t j : plan.clusters[b]) {
                    if (fits(i, j, cluster_payload[a]) && fits(j, i, cluster_payload[b])) {
                        dest[i].push_back(j);
                        sent[i] = std::max(sent[i], cluster_payload[a]);
                        dest[j].push_back(i);
                        sent[j] = std::max(sent[j], cluster_payload[b]);
                        plan.connection[i * n + j] = 1;
                        plan.connection[j * n + i] = 1;
                        linked = true;
                        break;
                    }
                }
                if (linked) break;
            }
            if (!linked) plan.skipped.emplace_back(a, b);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (dest[i].empty()) continue;
        bool ok = false;
        for (auto& l : detail::power_links(i, dest[i], sent[i], in, ok)) plan.links.push_back(l);
    }
    return plan;
}

/// Data-volume weights α_j = N_j / Σ N.
inline std::vector<double> volume_weights(std::span<const std::size_t> sample_counts) {
    double total = 0.0;
    for (auto c : sample_counts) total += static_cast<double>(c);
    if (!(total > 0.0)) throw DomainError("volume_weights: no samples");
    std::vector<double> out;
    for (auto c : sample_counts) out.push_back(static_cast<double>(c) / total);
    return out;
}

/// Position-wise weighted mean of masked expansions over the members active at
/// each position: B̄[p] = Σ_{j: M_j[p]=1} α_j B_j[p] / Σ_{j: M_j[p]=1} α_j, and 0
/// where no member is active. With full masks this is Σ_j α_j B_j.
inline Matrix aggregate_expansions(std::span<const Matrix* const> expansions, std::span<const Mask* const> masks,
                                   std::span<const double> weights) {
    if (expansions.empty() || expansions.size() != masks.size() || expansions.size() != weights.size())
        throw DimensionError("aggregate_expansions: members, masks and weights disagree");
    const Matrix& first = *expansions.front();
    Matrix out(first.rows(), first.cols(), 0.0);
    auto od = out.data();
    std::vector<double> wsum(od.size(), 0.0);
    for (std::size_t j = 0; j < expansions.size(); ++j) {
        if (!expansions[j]->same_shape(first) || masks[j]->size() != od.size())
            throw DimensionError("aggregate_expansions: shape mismatch");
        auto bd = expansions[j]->data();
        const Mask& m = *masks[j];
        for (std::size_t p = 0; p < od.size(); ++p) {
            if (!m[p]) continue;
            od[p] += weights[j] * bd[p];
            wsum[p] += weights[j];
        }
    }
    for (std::size_t p = 0; p < od.size(); ++p) od[p] = wsum[p] > 0.0 ? od[p] / wsum[p] : 0.0;
    return out;
}

}  // namespace soldfl
