// soldfl: batch runs, dry-run plans and the acceptance suite.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soldfl/acceptance.hpp"
#include "soldfl/config.hpp"
#include "soldfl/metrics_io.hpp"
#include "soldfl/sim.hpp"

#ifndef SOLDFL_BUILD_ID
#define SOLDFL_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace soldfl;

namespace {

enum Exit { ok = 0, suite_failed = 1, config_error = 2, numeric_error = 3, infeasible = 4, io_error = 5 };

struct Manifest {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir = "out";
    std::vector<Method> methods;
    ExperimentConfig base;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

std::uint64_t parse_seed(const std::string& text, const std::string& field) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) throw ConfigError(field, "'" + text + "' is not a seed");
    return v;
}

Manifest resolve(const std::string& config_path, const std::string& seeds_csv, const std::string& method_csv,
                 const std::string& out_dir) {
    Manifest m;
    m.config_path = config_path;
    m.out_dir = out_dir;
    m.base = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (const char* env = std::getenv("SOLDFL_SEED"); env && *env) m.base.seed = parse_seed(env, "SOLDFL_SEED");
    if (!seeds_csv.empty()) {
        for (const auto& s : split_csv(seeds_csv)) m.seeds.push_back(parse_seed(s, "--seeds"));
        if (m.seeds.empty()) throw ConfigError("--seeds", "empty seed list");
    } else {
        m.seeds.push_back(m.base.seed);
    }
    if (method_csv.empty()) {
        m.methods.push_back(m.base.method);
    } else if (method_csv == "all") {
        m.methods = {Method::proposed,      Method::proposed_single_cluster, Method::lora_baseline,
                     Method::lori_baseline, Method::hard_routing_oracle,     Method::full_finetune};
    } else {
        for (const auto& name : split_csv(method_csv)) m.methods.push_back(parse_method(name));
    }
    return m;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + path.string());
}

std::string cell_name(const char* prefix, Method m, std::uint64_t seed, const char* ext) {
    return std::string(prefix) + "_" + to_string(m) + "_seed" + std::to_string(seed) + ext;
}

int run_cells(const Manifest& m) {
    fs::create_directories(m.out_dir);
    write_file(fs::path(m.out_dir) / "resolved_config.ini", emit_config(m.base));
    SummaryBuilder summary;
    for (Method method : m.methods) {
        for (std::uint64_t seed : m.seeds) {
            ExperimentConfig cfg = m.base;
            cfg.method = method;
            cfg.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            const ExperimentSetup setup = prepare_experiment(cfg);
            write_file(fs::path(m.out_dir) / cell_name("plan", method, seed, ".txt"), plan_text(setup));
            Simulation sim(setup);
            const RunResult run = sim.run();
            write_file(fs::path(m.out_dir) / cell_name("metrics", method, seed, ".csv"), metrics_csv(run));
            summary.add(run);
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cerr << to_string(method) << " seed " << seed << ": final avg loss " << format_real(run.final_avg_loss)
                      << " (" << sec << " s)\n";
        }
    }
    auto doc = summary.json();
    doc["config"] = m.config_path;
    doc["build"] = SOLDFL_BUILD_ID;
    write_file(fs::path(m.out_dir) / "summary.json", doc.dump(2) + "\n");
    return ok;
}

int run_plans(const Manifest& m) {
    fs::create_directories(m.out_dir);
    for (Method method : m.methods)
        for (std::uint64_t seed : m.seeds) {
            ExperimentConfig cfg = m.base;
            cfg.method = method;
            cfg.seed = seed;
            const std::string text = plan_text(prepare_experiment(cfg));
            write_file(fs::path(m.out_dir) / cell_name("plan", method, seed, ".txt"), text);
            std::cout << text << '\n';
        }
    return ok;
}

int run_suite(const std::string& suite, const Manifest& m, const std::string& criteria) {
    if (suite != "acceptance") throw ConfigError("--suite", "unknown suite '" + suite + "'");
    std::vector<int> ids;
    for (const auto& c : split_csv(criteria)) ids.push_back(static_cast<int>(parse_seed(c, "--criteria")));
    const auto results = acceptance::run_all(std::cout, m.base, ids);
    for (const auto& r : results)
        if (!r.passed) return suite_failed;
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-adapter decentralized fine-tuning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", seeds, method, suite, criteria;
    auto* run = app.add_subcommand("run", "Run every (method, seed) cell, or a named suite");
    run->add_option("--config", config_path, "Experiment config (INI)")->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--seeds", seeds, "Comma-separated root seeds");
    run->add_option("--method", method, "Method name, comma-separated list, or 'all'");
    run->add_option("--suite", suite, "Named suite instead of a batch run (acceptance)");
    run->add_option("--criteria", criteria, "Comma-separated criterion ids for --suite acceptance");

    auto* plan = app.add_subcommand("plan", "Topology and feasibility dry run, no training");
    plan->add_option("--config", config_path, "Experiment config (INI)")->check(CLI::ExistingFile);
    plan->add_option("--out", out_dir, "Output directory");
    plan->add_option("--seeds", seeds, "Comma-separated root seeds");
    plan->add_option("--method", method, "Method name, comma-separated list, or 'all'");

    CLI11_PARSE(app, argc, argv);

    try {
        const Manifest m = resolve(config_path, seeds, method, out_dir);
        if (*run) return suite.empty() ? run_cells(m) : run_suite(suite, m, criteria);
        return run_plans(m);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NumericFailure& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return numeric_error;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return infeasible;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return io_error;
    }
}
