#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "json.hpp"
#include "soldfl/checkpoint.hpp"
#include "soldfl/metrics_io.hpp"

using namespace soldfl;

namespace {

ExperimentConfig tiny(Method method, std::size_t rounds) {
    ExperimentConfig c;
    c.method = method;
    c.devices = 4;
    c.tasks = 2;
    c.layers = 2;
    c.width = 16;
    c.rank = 4;
    c.rounds = rounds;
    c.train_samples = 64;
    c.eval_samples = 32;
    c.probe_samples = 32;
    c.batch_size = 16;
    c.compute_cap_flops = 1536;
    return c;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

AdapterStack trained_stack() {
    AdapterStack stack;
    for (std::size_t l = 0; l < 3; ++l) {
        AdapterPair a = init_adapter(7, 5, 3, 100 + l, l);
        a.expansion = gaussian_matrix(7, 3, 200 + l);
        if (l != 1) a = build_mask(std::move(a), 0.4);
        if (l == 0) {
            const std::vector<double> act{1, 2, 0.5, 0, 3};
            a = refine_projection(std::move(a), act);
        }
        if (!a.mask_built) std::fill(a.mask.begin(), a.mask.end(), std::uint8_t{1});
        stack.push_back(std::move(a));
    }
    return stack;
}

}  // namespace

TEST(Config, EmitParseRoundTrip) {
    ExperimentConfig c;
    c.devices = 9;
    c.tasks = 3;
    c.learning_rate = 0.1 + 0.2;
    c.method = Method::lori_baseline;
    c.radio.power_cap_w = 1.0 / 3.0;
    c.cluster.s_max = 0.7;
    const std::string text = emit_config(c);
    const ExperimentConfig back = parse_config_text(text);
    EXPECT_EQ(emit_config(back), text);
    EXPECT_EQ(back.learning_rate, 0.1 + 0.2);
    EXPECT_EQ(back.radio.power_cap_w, 1.0 / 3.0);
    EXPECT_EQ(back.method, Method::lori_baseline);
}

TEST(Config, EmitUsesShortestNumbers) {
    ExperimentConfig c;
    c.learning_rate = 0.7;
    const std::string text = emit_config(c);
    EXPECT_NE(text.find("learning_rate = 0.7\n"), std::string::npos);
    EXPECT_EQ(text.find("0.69999"), std::string::npos);
}

TEST(Config, MissingKeysKeepDefaults) {
    const auto c = parse_config_text("[experiment]\nrounds = 3\n");
    EXPECT_EQ(c.rounds, 3u);
    EXPECT_EQ(emit_config(parse_config_text("")), emit_config(ExperimentConfig{}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto field_of = [](const std::string& text) {
        try {
            parse_config_text(text);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("<no error>");
    };
    EXPECT_EQ(field_of("[experiment]\nrounds = 3\nbogus = 1\n"), "experiment.bogus");
    EXPECT_EQ(field_of("[nowhere]\nrounds = 3\n"), "nowhere.rounds");
    EXPECT_EQ(field_of("[experiment]\nrounds = three\n"), "experiment.rounds");
    EXPECT_EQ(field_of("[experiment]\nrounds = -2\n"), "experiment.rounds");
    EXPECT_EQ(field_of("[experiment]\nmethod = magic\n"), "experiment.method");
    EXPECT_EQ(field_of("[experiment]\ndevices = 3\ntasks = 5\n"), "experiment.tasks");
    EXPECT_EQ(field_of("[experiment]\ndevices = 16\n"), "experiment.devices");
    EXPECT_EQ(field_of("[experiment]\nrank = 0\n"), "experiment.rank");
}

TEST(Config, LoadMissingFile) {
    EXPECT_THROW(load_config("/nonexistent/soldfl.cfg"), ConfigError);
}

TEST(Metrics, FormatRealRoundTrips) {
    Rng rng(4);
    for (int t = 0; t < 2000; ++t) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
        EXPECT_EQ(std::strtod(format_real(v).c_str(), nullptr), v);
    }
    EXPECT_EQ(format_real(0.25), "0.25");
    EXPECT_EQ(format_real(3.0), "3");
    EXPECT_EQ(format_real(std::numeric_limits<double>::infinity()), "inf");
}

TEST(Metrics, ColumnCountAndOrder) {
    ExperimentConfig c;
    const auto cols = metrics_columns(c);
    EXPECT_EQ(cols.size(), 2 + c.tasks + 2 + c.devices + 3 + 3 * c.layers + 2);
    EXPECT_EQ(cols.front(), "round");
    EXPECT_EQ(cols[1], "avg_loss");
    EXPECT_EQ(cols[2], "task0_loss");
    EXPECT_EQ(cols[2 + c.tasks], "total_bits");
    EXPECT_EQ(cols[4 + c.tasks], "device0_bits");
    EXPECT_EQ(cols[4 + c.tasks + c.devices], "energy_j");
    EXPECT_EQ(cols.back(), "bound_violations");
}

TEST(Metrics, CsvRowsMatchRun) {
    for (Method m : {Method::proposed, Method::lora_baseline}) {
        const auto run = run_experiment(tiny(m, 4));
        std::istringstream in(metrics_csv(run));
        std::string line;
        std::getline(in, line);
        const auto header = split(line);
        EXPECT_EQ(header, metrics_columns(run.config));
        std::size_t rows = 0;
        while (std::getline(in, line)) {
            const auto cells = split(line);
            ASSERT_EQ(cells.size(), header.size()) << line;
            const auto& r = run.rounds[rows];
            EXPECT_EQ(cells[0], std::to_string(r.round));
            EXPECT_EQ(std::strtod(cells[1].c_str(), nullptr), r.avg_loss);
            EXPECT_EQ(cells[4], std::to_string(r.total_bits));
            EXPECT_EQ(cells.back().empty(), !r.has_bound);
            ++rows;
        }
        EXPECT_EQ(rows, 4u);
    }
}

TEST(Summary, MeanStdAndLayout) {
    const auto one = mean_std({2.0});
    EXPECT_EQ(one.mean, 2.0);
    EXPECT_EQ(one.std, 0.0);
    const auto three = mean_std({1.0, 2.0, 6.0});
    EXPECT_DOUBLE_EQ(three.mean, 3.0);
    EXPECT_DOUBLE_EQ(three.std, std::sqrt(7.0));

    SummaryBuilder sb;
    std::vector<double> lora_avg;
    for (std::uint64_t seed : {1, 2}) {
        for (Method m : {Method::lora_baseline, Method::proposed}) {
            auto cfg = tiny(m, 2);
            cfg.seed = seed;
            const auto run = run_experiment(cfg);
            if (m == Method::lora_baseline) lora_avg.push_back(run.final_avg_loss);
            sb.add(run);
        }
    }
    const auto doc = nlohmann::json::parse(sb.dump());
    ASSERT_EQ(doc["methods"].size(), 2u);
    EXPECT_EQ(doc["methods"][0]["method"], "lora_baseline");
    EXPECT_EQ(doc["methods"][1]["method"], "proposed");
    EXPECT_EQ(doc["methods"][0]["seeds"], (std::vector<int>{1, 2}));
    EXPECT_EQ(doc["methods"][0]["task_loss"].size(), 2u);
    EXPECT_EQ(doc["columns"].size(), 4u);
    const auto ms = mean_std(lora_avg);
    EXPECT_DOUBLE_EQ(doc["methods"][0]["avg_loss"]["mean"].get<double>(), ms.mean);
    EXPECT_DOUBLE_EQ(doc["methods"][0]["avg_loss"]["std"].get<double>(), ms.std);
    EXPECT_DOUBLE_EQ(doc["methods"][0]["params"]["mean"].get<double>(), 2.0 * 16 * 4 * 2);
}

TEST(Checkpoint, RoundTripRegeneratesProjection) {
    const AdapterStack stack = trained_stack();
    const std::string bytes = checkpoint_bytes(stack);
    EXPECT_EQ(bytes.substr(0, 4), "SOLA");
    const AdapterStack back = checkpoint_from_bytes(bytes);
    ASSERT_EQ(back.size(), stack.size());
    for (std::size_t l = 0; l < stack.size(); ++l) {
        const auto& a = stack[l];
        const auto& b = back[l];
        EXPECT_EQ(b.layer_index, a.layer_index);
        EXPECT_EQ(b.seed, a.seed);
        EXPECT_EQ(b.projection, a.projection);
        EXPECT_EQ(b.mask, a.mask);
        EXPECT_EQ(b.mask_built, a.mask_built);
        EXPECT_EQ(b.sparsity_rate, a.sparsity_rate);
        EXPECT_EQ(b.masked_expansion(), a.masked_expansion());
        EXPECT_EQ(b.refinement, a.refinement);
        if (a.refined_projection) {
            ASSERT_TRUE(b.refined_projection.has_value());
            EXPECT_LE(frobenius_norm(*b.refined_projection - *a.refined_projection), 1e-15);
        }
    }
    EXPECT_EQ(checkpoint_bytes(back), bytes);
}

TEST(Checkpoint, SizeMatchesLayout) {
    const AdapterStack stack = trained_stack();
    std::size_t expected = 12;
    for (const auto& a : stack) {
        expected += 16 + 8 + 8 + 2;
        if (a.refinement) expected += 8 * a.k();
        expected += (a.d() * a.r() + 7) / 8 + 8 + 8 * a.active_count();
    }
    EXPECT_EQ(checkpoint_bytes(stack).size(), expected);
}

TEST(Checkpoint, CorruptStreamsRejected) {
    const std::string bytes = checkpoint_bytes(trained_stack());
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(checkpoint_from_bytes(bad_magic), CheckpointError);

    std::string bad_version = bytes;
    bad_version[4] = 2;
    EXPECT_THROW(checkpoint_from_bytes(bad_version), CheckpointError);

    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
        EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, cut)), CheckpointError) << "cut at " << cut;
}

TEST(Plan, ZeroPowerCapMarksEveryLinkInfeasible) {
    auto cfg = tiny(Method::proposed, 2);
    cfg.radio.power_cap_w = 0.0;
    const auto setup = prepare_experiment(cfg);
    EXPECT_EQ(setup.plan.clusters.size(), cfg.devices);
    const std::string text = plan_text(setup);
    const auto begin = text.find("[links]\n"), end = text.find("\n[plan_links]");
    ASSERT_NE(begin, std::string::npos);
    std::istringstream in(text.substr(begin + 8, end - begin - 8));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EXPECT_NE(line.find("infeasible"), std::string::npos) << line;
        ++lines;
    }
    EXPECT_EQ(lines, cfg.devices * (cfg.devices - 1));
}

TEST(Plan, GenerousRadioAndLooseCapGiveOneCluster) {
    auto cfg = tiny(Method::proposed, 2);
    cfg.radio.power_cap_w = 1e6;
    cfg.cluster.s_max = 1.0;
    const std::string text = plan_text(prepare_experiment(cfg));
    EXPECT_NE(text.find("clusters = 1\n"), std::string::npos);
    EXPECT_NE(text.find("cluster0 = 0 1 2 3\n"), std::string::npos);
    EXPECT_NE(text.find("[bound]\ncluster0_l0 = collision "), std::string::npos);
}
