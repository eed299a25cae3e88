#pragma once

// Metric files: per-run CSV, the cross-seed summary and the dry-run plan.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "soldfl/collision.hpp"
#include "soldfl/sim.hpp"

namespace soldfl {

/// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

/// Column names of the per-run CSV, in file order.
inline std::vector<std::string> metrics_columns(const ExperimentConfig& cfg) {
    std::vector<std::string> cols{"round", "avg_loss"};
    for (std::size_t t = 0; t < cfg.tasks; ++t) cols.push_back("task" + std::to_string(t) + "_loss");
    cols.insert(cols.end(), {"total_bits", "exchange_bits"});
    for (std::size_t i = 0; i < cfg.devices; ++i) cols.push_back("device" + std::to_string(i) + "_bits");
    cols.insert(cols.end(), {"energy_j", "links", "dropped_links"});
    for (std::size_t l = 0; l < cfg.layers; ++l) cols.push_back("collision_l" + std::to_string(l));
    for (std::size_t l = 0; l < cfg.layers; ++l) cols.push_back("bound_lhs_l" + std::to_string(l));
    for (std::size_t l = 0; l < cfg.layers; ++l) cols.push_back("bound_rhs_l" + std::to_string(l));
    cols.insert(cols.end(), {"bound_checks", "bound_violations"});
    return cols;
}

/// One row per round; bound columns are empty for methods without clusters.
inline void write_metrics_csv(std::ostream& os, const RunResult& run) {
    const ExperimentConfig& cfg = run.config;
    const auto cols = metrics_columns(cfg);
    for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
    os << '\n';
    for (const RoundMetrics& m : run.rounds) {
        std::vector<std::string> f{std::to_string(m.round), format_real(m.avg_loss)};
        for (double v : m.task_loss) f.push_back(format_real(v));
        f.push_back(std::to_string(m.total_bits));
        f.push_back(std::to_string(m.exchange_bits));
        for (auto b : m.device_bits) f.push_back(std::to_string(b));
        f.push_back(format_real(m.energy_j));
        f.push_back(std::to_string(m.links));
        f.push_back(std::to_string(m.dropped_links));
        for (double v : m.collision) f.push_back(format_real(v));
        for (std::size_t l = 0; l < cfg.layers; ++l) f.push_back(m.has_bound ? format_real(m.bound_lhs[l]) : "");
        for (std::size_t l = 0; l < cfg.layers; ++l) f.push_back(m.has_bound ? format_real(m.bound_rhs[l]) : "");
        f.push_back(m.has_bound ? std::to_string(m.bound_checks) : "");
        f.push_back(m.has_bound ? std::to_string(m.bound_violations) : "");
        for (std::size_t c = 0; c < f.size(); ++c) os << (c ? "," : "") << f[c];
        os << '\n';
    }
}

inline std::string metrics_csv(const RunResult& run) {
    std::ostringstream os;
    write_metrics_csv(os, run);
    return os.str();
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    if (v.empty()) return out;
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

/// Trainable parameters per device, averaged over devices.
inline double mean_trainable_params(const RunResult& run) {
    if (run.trainable_params.empty()) return 0.0;
    double s = 0.0;
    for (auto p : run.trainable_params) s += static_cast<double>(p);
    return s / static_cast<double>(run.trainable_params.size());
}

/// Inner-aggregation parameters sent per device per round, averaged over rounds and devices.
inline double mean_transmitted_params(const RunResult& run) {
    if (run.rounds.empty() || run.config.devices == 0) return 0.0;
    double bits = 0.0;
    for (const auto& m : run.rounds) bits += static_cast<double>(m.total_bits);
    return bits / static_cast<double>(run.rounds.size() * run.config.devices * run.config.radio.bits_per_parameter);
}

/// Cross-seed summary, one block per method in insertion order.
class SummaryBuilder {
public:
    void add(const RunResult& run) {
        const std::string name = to_string(run.config.method);
        if (!index_.count(name)) {
            index_[name] = order_.size();
            order_.push_back(name);
            cells_.emplace_back();
        }
        cells_[index_[name]].push_back(Cell{run.config.seed, mean_trainable_params(run), mean_transmitted_params(run),
                                            run.final_task_loss, run.final_avg_loss, run.rounds.size()});
    }

    nlohmann::ordered_json json() const {
        nlohmann::ordered_json methods = nlohmann::ordered_json::array();
        for (std::size_t m = 0; m < order_.size(); ++m) {
            const auto& cells = cells_[m];
            nlohmann::ordered_json j;
            j["method"] = order_[m];
            std::vector<std::uint64_t> seeds;
            std::vector<double> params, trans, avg;
            for (const auto& c : cells) {
                seeds.push_back(c.seed);
                params.push_back(c.params);
                trans.push_back(c.trans);
                avg.push_back(c.avg);
            }
            j["seeds"] = seeds;
            j["rounds"] = cells.empty() ? 0 : cells.front().rounds;
            j["params"] = pack(mean_std(params));
            j["trans"] = pack(mean_std(trans));
            nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
            const std::size_t n_tasks = cells.empty() ? 0 : cells.front().task_loss.size();
            for (std::size_t t = 0; t < n_tasks; ++t) {
                std::vector<double> v;
                for (const auto& c : cells) v.push_back(c.task_loss.at(t));
                nlohmann::ordered_json tj = pack(mean_std(v));
                tj["task"] = t;
                tasks.push_back(tj);
            }
            j["task_loss"] = tasks;
            j["avg_loss"] = pack(mean_std(avg));
            j["avg_loss_per_seed"] = avg;
            methods.push_back(j);
        }
        nlohmann::ordered_json doc;
        doc["columns"] = {"# Params", "# Trans.", "per-task final eval loss", "Avg."};
        doc["methods"] = methods;
        return doc;
    }

    std::string dump() const { return json().dump(2) + "\n"; }

private:
    struct Cell {
        std::uint64_t seed;
        double params;
        double trans;
        std::vector<double> task_loss;
        double avg;
        std::size_t rounds;
    };

    static nlohmann::ordered_json pack(const MeanStd& ms) {
        nlohmann::ordered_json j;
        j["mean"] = ms.mean;
        j["std"] = ms.std;
        return j;
    }

    std::map<std::string, std::size_t> index_;
    std::vector<std::string> order_;
    std::vector<std::vector<Cell>> cells_;
};

/// Dry run: topology, link powers, per-round inner bits and the collision-bound
/// coefficient 2·r·k·n²·S per cluster and layer (rhs = coefficient·(G+P)).
inline void write_plan(std::ostream& os, const ExperimentSetup& s) {
    const ExperimentConfig& cfg = s.config;
    const std::size_t n = cfg.devices;
    os << "[plan]\n";
    os << "method = " << to_string(cfg.method) << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "devices = " << n << "\n";
    os << "clusters = " << s.plan.clusters.size() << "\n";
    for (std::size_t c = 0; c < s.plan.clusters.size(); ++c) {
        os << "cluster" << c << " =";
        for (auto d : s.plan.clusters[c]) os << ' ' << d;
        os << "\n";
    }
    const double pairs = n > 1 ? static_cast<double>(n * (n - 1)) : 1.0;
    os << "u_density = " << format_real(static_cast<double>(s.plan.link_count()) / pairs) << "\n";

    os << "\n[devices]\n";
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = s.placement.positions()[i];
        os << "device" << i << " = task " << cfg.task_of(i) << ", x_m " << format_real(p.x) << ", y_m "
           << format_real(p.y) << ", payload_params " << format_real(s.payload_params[i]) << ", sparsity";
        for (double v : s.sparsity[i]) os << ' ' << format_real(v);
        os << "\n";
    }

    // Every ordered pair as a lone link in round 1: is it usable at all?
    os << "\n[links]\n";
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const std::size_t peer[1] = {j};
            const auto rep = check_feasibility(i, peer, s.payload_params[i], s.placement, 1, cfg.radio);
            const auto& l = rep.links.front();
            os << i << "->" << j << " = gain " << format_real(l.gain) << ", power_w " << format_real(l.power)
               << ", delay_s " << format_real(l.delay) << ", " << (rep.feasible ? "feasible" : "infeasible");
            for (const auto& b : rep.binding) os << "; " << b;
            os << "\n";
        }

    os << "\n[plan_links]\n";
    for (const Link& l : s.plan.links)
        os << l.from << "->" << l.to << " = power_w " << format_real(l.power) << ", delay_s " << format_real(l.delay)
           << "\n";

    os << "\n[rounds]\n";
    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        const ClusterPlan conn = round_connection(s, round);
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            bool sends = false;
            for (std::size_t j = 0; j < n; ++j) sends = sends || conn.u(i, j);
            if (sends) bits += static_cast<std::uint64_t>(s.payload_params[i]) * cfg.radio.bits_per_parameter;
        }
        os << "round" << round << " = total_bits " << bits << ", links " << conn.link_count() << ", dropped "
           << conn.dropped_links << "\n";
    }

    os << "\n[bound]\n";
    for (std::size_t c = 0; c < s.plan.clusters.size(); ++c) {
        const auto& members = s.plan.clusters[c];
        if (members.size() < 2) continue;
        const auto m = static_cast<double>(members.size());
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            std::vector<double> sp;
            for (auto d : members) sp.push_back(s.sparsity[d][l]);
            const double rate = collision_rate(sp);
            const double coeff = 2.0 * static_cast<double>(cfg.rank * cfg.width) * m * m * rate;
            os << "cluster" << c << "_l" << l << " = collision " << format_real(rate) << ", rhs_per_unit_gp "
               << format_real(coeff) << "\n";
        }
    }
}

inline std::string plan_text(const ExperimentSetup& s) {
    std::ostringstream os;
    write_plan(os, s);
    return os.str();
}

}  // namespace soldfl
