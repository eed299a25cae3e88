#pragma once

// Experiment configuration and its sectioned key=value text form.
//
//   [experiment]  model, data, training and allocation knobs
//   [radio]       physical-layer constants (units in key names)
//   [cluster]     clustering and exchange cadence

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "soldfl/adapter.hpp"
#include "soldfl/error.hpp"
#include "soldfl/sparsity_alloc.hpp"
#include "soldfl/topology.hpp"
#include "soldfl/wireless.hpp"

namespace soldfl {

enum class Method { proposed, proposed_single_cluster, lora_baseline, lori_baseline, hard_routing_oracle, full_finetune };
enum class Allocation { entropy, uniform };

inline const std::vector<std::pair<Method, std::string>>& method_names() {
    static const std::vector<std::pair<Method, std::string>> names{
        {Method::proposed, "proposed"},
        {Method::proposed_single_cluster, "proposed_single_cluster"},
        {Method::lora_baseline, "lora_baseline"},
        {Method::lori_baseline, "lori_baseline"},
        {Method::hard_routing_oracle, "hard_routing_oracle"},
        {Method::full_finetune, "full_finetune"},
    };
    return names;
}

inline std::string to_string(Method m) {
    for (const auto& [k, v] : method_names())
        if (k == m) return v;
    return "unknown";
}

inline Method parse_method(const std::string& s) {
    for (const auto& [k, v] : method_names())
        if (v == s) return k;
    throw ConfigError("experiment.method", "unknown method '" + s + "'");
}

struct ExperimentConfig {
    Method method = Method::proposed;
    std::size_t devices = 8;
    std::size_t tasks = 4;
    std::size_t layers = 4;
    std::size_t width = 32;  // d_l = k_l
    std::size_t rank = 8;
    std::size_t rounds = 200;
    std::uint64_t seed = 1;
    std::size_t batch_size = 32;
    std::size_t local_steps = 1;
    double learning_rate = 0.7;         // sparse expansion matrices
    double lora_learning_rate = 0.3;    // dense LoRA factors
    double dense_learning_rate = 1.0;   // full weight deltas
    double lori_learning_rate = 0.01;   // sparse expansions under unrefined projections
    std::size_t train_samples = 256;    // per device
    std::size_t eval_samples = 64;      // per task
    std::size_t probe_samples = 64;     // per task
    double noise_std = 0.01;
    double input_mean_scale = 0.5;
    double input_noise = 1.0;  // std of in-block coordinates
    double input_leak = 0.05;  // std of coordinates outside the task's block
    double delta_scale = 0.5;
    std::size_t task_rank = 8;
    double base_gain = 1.0;
    double base_mixing = 0.1;  // 0: block-diagonal per task, 1: dense
    double compute_cap_flops = 24576.0;
    double flops_per_param_sample = 6.0;
    Allocation allocation = Allocation::entropy;
    CovarianceMode covariance_mode = CovarianceMode::batch;
    double entropy_log_base = 0.0;  // 0 means natural log
    MaskSelect mask_select = MaskSelect::magnitude;
    TopkRanking topk_ranking = TopkRanking::magnitude;
    std::size_t top_k = 0;  // 0 means rank
    bool refinement = true;
    double link_probability = 0.5;

    RadioConfig radio{};
    ClusterConfig cluster{.s_max = 0.3};

    std::size_t effective_top_k() const noexcept { return top_k == 0 ? rank : top_k; }

    std::size_t task_of(std::size_t device) const noexcept { return device % tasks; }

    std::size_t q_budget() const {
        return parameter_budget(compute_cap_flops, batch_size, flops_per_param_sample, train_samples);
    }

    std::vector<LayerDims> layer_dims() const { return std::vector<LayerDims>(layers, LayerDims{width, rank}); }

    void validate() const {
        auto need = [](bool ok, const char* field, const char* what) {
            if (!ok) throw ConfigError(field, what);
        };
        need(devices >= 1 && devices <= 15, "experiment.devices", "must lie in [1, 15]");
        need(tasks >= 1 && tasks <= devices, "experiment.tasks", "must lie in [1, devices]");
        need(layers >= 1, "experiment.layers", "must be >= 1");
        need(width >= 1, "experiment.width", "must be >= 1");
        need(rank >= 1 && rank <= width, "experiment.rank", "must lie in [1, width]");
        need(batch_size >= 1 && batch_size <= train_samples, "experiment.batch_size", "must lie in [1, train_samples]");
        need(local_steps >= 1, "experiment.local_steps", "must be >= 1");
        need(learning_rate >= 0.0 && std::isfinite(learning_rate), "experiment.learning_rate", "must be finite and >= 0");
        need(lora_learning_rate >= 0.0 && std::isfinite(lora_learning_rate), "experiment.lora_learning_rate",
             "must be finite and >= 0");
        need(dense_learning_rate >= 0.0 && std::isfinite(dense_learning_rate), "experiment.dense_learning_rate",
             "must be finite and >= 0");
        need(lori_learning_rate >= 0.0 && std::isfinite(lori_learning_rate), "experiment.lori_learning_rate",
             "must be finite and >= 0");
        need(train_samples >= 1, "experiment.train_samples", "must be >= 1");
        need(eval_samples >= 1, "experiment.eval_samples", "must be >= 1");
        need(probe_samples >= 1, "experiment.probe_samples", "must be >= 1");
        need(noise_std >= 0.0, "experiment.noise_std", "must be >= 0");
        need(input_noise >= 0.0, "experiment.input_noise", "must be >= 0");
        need(input_leak >= 0.0, "experiment.input_leak", "must be >= 0");
        need(base_mixing >= 0.0 && base_mixing <= 1.0, "experiment.base_mixing", "must lie in [0, 1]");
        need(task_rank >= 1 && task_rank <= width, "experiment.task_rank", "must lie in [1, width]");
        need(entropy_log_base == 0.0 || (entropy_log_base > 0.0 && entropy_log_base != 1.0),
             "experiment.entropy_log_base", "must be e, or a positive number other than 1");
        need(top_k <= rank, "experiment.top_k", "must not exceed rank");
        need(link_probability >= 0.0 && link_probability <= 1.0, "experiment.link_probability", "must lie in [0, 1]");
        need(q_budget() >= layers, "experiment.compute_cap_flops", "parameter budget is below one per layer");
        radio.validate();
        cluster.validate();
    }
};

namespace detail {

using Ptree = boost::property_tree::ptree;

inline std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

template <class T>
T parse_number(const std::string& field, const std::string& text) {
    if constexpr (std::is_unsigned_v<T>) {
        if (text.find('-') != std::string::npos) throw ConfigError(field, "must be non-negative, got '" + text + "'");
    }
    std::istringstream in(text);
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof()) throw ConfigError(field, "cannot parse '" + text + "'");
    return value;
}

inline bool parse_bool(const std::string& field, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError(field, "expected true or false, got '" + text + "'");
}

template <class E>
E parse_enum(const std::string& field, const std::string& text, const std::vector<std::pair<E, std::string>>& table) {
    for (const auto& [k, v] : table)
        if (v == text) return k;
    std::string options;
    for (const auto& [k, v] : table) options += (options.empty() ? "" : "|") + v;
    throw ConfigError(field, "expected one of " + options + ", got '" + text + "'");
}

template <class E>
std::string enum_name(E value, const std::vector<std::pair<E, std::string>>& table) {
    for (const auto& [k, v] : table)
        if (k == value) return v;
    return "?";
}

inline const std::vector<std::pair<Allocation, std::string>> kAllocation{{Allocation::entropy, "entropy"},
                                                                        {Allocation::uniform, "uniform"}};
inline const std::vector<std::pair<CovarianceMode, std::string>> kCovariance{
    {CovarianceMode::batch, "batch"}, {CovarianceMode::mean_outer, "mean_outer"}};
inline const std::vector<std::pair<MaskSelect, std::string>> kMaskSelect{{MaskSelect::magnitude, "magnitude"},
                                                                        {MaskSelect::signed_value, "signed"}};
inline const std::vector<std::pair<TopkRanking, std::string>> kRanking{{TopkRanking::magnitude, "magnitude"},
                                                                      {TopkRanking::signed_value, "signed"}};
inline const std::vector<std::pair<Linkage, std::string>> kLinkage{{Linkage::collision, "collision"},
                                                                  {Linkage::distance, "distance"}};

/// Binds each key to a reader and a writer over an ExperimentConfig.
struct FieldCodec {
    std::string section;
    std::string key;
    std::function<void(ExperimentConfig&, const std::string& field, const std::string& text)> read;
    std::function<std::string(const ExperimentConfig&)> write;
};

#define SOLDFL_NUM(sec, name, member, type)                                                              \
    FieldCodec {                                                                                         \
        sec, name, [](ExperimentConfig& c, const std::string& f, const std::string& t) {                 \
            c.member = parse_number<type>(f, t);                                                         \
        },                                                                                               \
            [](const ExperimentConfig& c) -> std::string {                                               \
                if constexpr (std::is_floating_point_v<type>) return format_double(c.member);           \
                else return std::to_string(c.member);                                                    \
            }                                                                                            \
    }

#define SOLDFL_ENUM(sec, name, member, table)                                                                    \
    FieldCodec {                                                                                                 \
        sec, name,                                                                                               \
            [](ExperimentConfig& c, const std::string& f, const std::string& t) { c.member = parse_enum(f, t, table); }, \
            [](const ExperimentConfig& c) { return enum_name(c.member, table); }                                \
    }

inline const std::vector<FieldCodec>& field_codecs() {
    static const std::vector<FieldCodec> codecs{
        FieldCodec{"experiment", "method",
                   [](ExperimentConfig& c, const std::string&, const std::string& t) { c.method = parse_method(t); },
                   [](const ExperimentConfig& c) { return to_string(c.method); }},
        SOLDFL_NUM("experiment", "devices", devices, std::size_t),
        SOLDFL_NUM("experiment", "tasks", tasks, std::size_t),
        SOLDFL_NUM("experiment", "layers", layers, std::size_t),
        SOLDFL_NUM("experiment", "width", width, std::size_t),
        SOLDFL_NUM("experiment", "rank", rank, std::size_t),
        SOLDFL_NUM("experiment", "rounds", rounds, std::size_t),
        SOLDFL_NUM("experiment", "seed", seed, std::uint64_t),
        SOLDFL_NUM("experiment", "batch_size", batch_size, std::size_t),
        SOLDFL_NUM("experiment", "local_steps", local_steps, std::size_t),
        SOLDFL_NUM("experiment", "learning_rate", learning_rate, double),
        SOLDFL_NUM("experiment", "lora_learning_rate", lora_learning_rate, double),
        SOLDFL_NUM("experiment", "dense_learning_rate", dense_learning_rate, double),
        SOLDFL_NUM("experiment", "lori_learning_rate", lori_learning_rate, double),
        SOLDFL_NUM("experiment", "train_samples", train_samples, std::size_t),
        SOLDFL_NUM("experiment", "eval_samples", eval_samples, std::size_t),
        SOLDFL_NUM("experiment", "probe_samples", probe_samples, std::size_t),
        SOLDFL_NUM("experiment", "noise_std", noise_std, double),
        SOLDFL_NUM("experiment", "input_mean_scale", input_mean_scale, double),
        SOLDFL_NUM("experiment", "input_noise", input_noise, double),
        SOLDFL_NUM("experiment", "input_leak", input_leak, double),
        SOLDFL_NUM("experiment", "delta_scale", delta_scale, double),
        SOLDFL_NUM("experiment", "task_rank", task_rank, std::size_t),
        SOLDFL_NUM("experiment", "base_gain", base_gain, double),
        SOLDFL_NUM("experiment", "base_mixing", base_mixing, double),
        SOLDFL_NUM("experiment", "compute_cap_flops", compute_cap_flops, double),
        SOLDFL_NUM("experiment", "flops_per_param_sample", flops_per_param_sample, double),
        SOLDFL_ENUM("experiment", "allocation", allocation, kAllocation),
        SOLDFL_ENUM("experiment", "covariance_mode", covariance_mode, kCovariance),
        FieldCodec{"experiment", "entropy_log_base",
                   [](ExperimentConfig& c, const std::string& f, const std::string& t) {
                       c.entropy_log_base = t == "e" ? 0.0 : parse_number<double>(f, t);
                   },
                   [](const ExperimentConfig& c) {
                       return c.entropy_log_base == 0.0 ? std::string("e") : format_double(c.entropy_log_base);
                   }},
        SOLDFL_ENUM("experiment", "mask_select", mask_select, kMaskSelect),
        SOLDFL_ENUM("experiment", "topk_ranking", topk_ranking, kRanking),
        SOLDFL_NUM("experiment", "top_k", top_k, std::size_t),
        FieldCodec{"experiment", "refinement",
                   [](ExperimentConfig& c, const std::string& f, const std::string& t) { c.refinement = parse_bool(f, t); },
                   [](const ExperimentConfig& c) { return std::string(c.refinement ? "true" : "false"); }},
        SOLDFL_NUM("experiment", "link_probability", link_probability, double),
        SOLDFL_NUM("radio", "bandwidth_hz", radio.bandwidth_hz, double),
        SOLDFL_NUM("radio", "noise_variance_w", radio.noise_variance, double),
        SOLDFL_NUM("radio", "delay_cap_s", radio.delay_cap_s, double),
        SOLDFL_NUM("radio", "power_cap_w", radio.power_cap_w, double),
        SOLDFL_NUM("radio", "bits_per_parameter", radio.bits_per_parameter, std::uint32_t),
        SOLDFL_NUM("radio", "region_radius_m", radio.region_radius_m, double),
        SOLDFL_NUM("cluster", "s_max", cluster.s_max, double),
        SOLDFL_NUM("cluster", "inner_rounds_per_exchange", cluster.inner_rounds_per_exchange, std::size_t),
        SOLDFL_ENUM("cluster", "linkage", cluster.linkage, kLinkage),
    };
    return codecs;
}

#undef SOLDFL_NUM
#undef SOLDFL_ENUM

}  // namespace detail

/// Parses INI text. Missing keys keep their defaults; unknown sections or keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
    detail::Ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()), e.message());
    }
    ExperimentConfig cfg;
    const auto& codecs = detail::field_codecs();
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(section, "key outside of any section");
        for (const auto& [key, value] : body) {
            const std::string field = section + "." + key;
            auto it = std::find_if(codecs.begin(), codecs.end(),
                                   [&](const auto& c) { return c.section == section && c.key == key; });
            if (it == codecs.end()) throw ConfigError(field, "unknown key");
            it->read(cfg, field, value.data());
        }
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
    return parse_config(in);
}

/// Full resolved configuration; parse_config(emit_config(c)) reproduces c.
inline std::string emit_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    std::string current;
    for (const auto& codec : detail::field_codecs()) {
        if (codec.section != current) {
            if (!current.empty()) out << '\n';
            out << '[' << codec.section << "]\n";
            current = codec.section;
        }
        out << codec.key << " = " << codec.write(cfg) << '\n';
    }
    return out.str();
}

}  // namespace soldfl
