#include <gtest/gtest.h>

#include <sstream>

#include "soldfl/metrics_io.hpp"
#include "soldfl/sim.hpp"

using namespace soldfl;

namespace {

ExperimentConfig small(Method method, std::size_t rounds = 10, std::uint64_t seed = 1) {
    ExperimentConfig c;
    c.method = method;
    c.devices = 4;
    c.tasks = 2;
    c.layers = 2;
    c.width = 16;
    c.rank = 4;
    c.rounds = rounds;
    c.seed = seed;
    c.train_samples = 64;
    c.eval_samples = 32;
    c.probe_samples = 32;
    c.batch_size = 16;
    c.compute_cap_flops = 1536;
    c.cluster.inner_rounds_per_exchange = 2;
    return c;
}

double frozen_loss(const SyntheticWorld& w, std::size_t task) {
    ModelView v;
    v.base = &w.base;
    return evaluate(v, w.eval[task]);
}

const std::vector<Method> kAllMethods{Method::proposed,      Method::proposed_single_cluster, Method::lora_baseline,
                                      Method::lori_baseline, Method::hard_routing_oracle,     Method::full_finetune};

}  // namespace

TEST(GenerateTasks, SameSeedSameData) {
    const auto cfg = small(Method::proposed);
    const auto a = generate_tasks(cfg, 5), b = generate_tasks(cfg, 5), c = generate_tasks(cfg, 6);
    EXPECT_EQ(a.train[0].x, b.train[0].x);
    EXPECT_EQ(a.eval[1].y, b.eval[1].y);
    EXPECT_EQ(a.base.layers, b.base.layers);
    EXPECT_NE(a.train[0].x, c.train[0].x);
}

TEST(GenerateTasks, DeltasAreLowRank) {
    auto cfg = small(Method::proposed);
    cfg.task_rank = 3;
    const auto w = generate_tasks(cfg, 2);
    ASSERT_EQ(w.tasks.size(), 2u);
    for (const auto& t : w.tasks)
        for (const Matrix& d : t.deltas) EXPECT_LE(svd(d).rank(1e-10), 3u);
    EXPECT_NE(w.tasks[0].deltas[0], w.tasks[1].deltas[0]);
}

TEST(GenerateTasks, ExactDeltaWithoutNoiseFitsPerfectly) {
    auto cfg = small(Method::proposed);
    cfg.noise_std = 0.0;
    const auto w = generate_tasks(cfg, 3);
    for (std::size_t t = 0; t < cfg.tasks; ++t) {
        ModelView v;
        v.base = &w.base;
        v.delta = &w.tasks[t].deltas;
        EXPECT_NEAR(evaluate(v, w.eval[t]), 0.0, 1e-24);
    }
}

TEST(GenerateTasks, TasksAreGenuinelyDifferent) {
    double own = 0, cross = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto cfg = small(Method::proposed, 0, seed);
        const auto w = generate_tasks(cfg, seed);
        ModelView fit;
        fit.base = &w.base;
        fit.delta = &w.tasks[0].deltas;
        own += evaluate(fit, w.eval[0]);
        cross += evaluate(fit, w.eval[1]);
    }
    EXPECT_GT(cross, own);
}

TEST(Simulation, ZeroRoundsLeavesFrozenModel) {
    for (Method m : kAllMethods) {
        const auto setup = prepare_experiment(small(m, 0));
        const auto run = Simulation(setup).run();
        EXPECT_TRUE(run.rounds.empty());
        ASSERT_EQ(run.final_task_loss.size(), 2u);
        for (std::size_t t = 0; t < 2; ++t) {
            EXPECT_NEAR(run.final_task_loss[t], frozen_loss(setup.world, t), 1e-12) << to_string(m);
            EXPECT_EQ(run.final_task_loss[t], run.initial_task_loss[t]);
        }
    }
}

TEST(Simulation, FrozenModelUntouchedAndLossDrops) {
    for (Method m : kAllMethods) {
        const auto run = run_experiment(small(m, 20));
        EXPECT_EQ(run.frozen_hash_before, run.frozen_hash_after) << to_string(m);
        ASSERT_EQ(run.rounds.size(), 20u);
        double before = 0;
        for (double v : run.initial_task_loss) before += v / 2;
        EXPECT_LT(run.final_avg_loss, before) << to_string(m);
    }
}

TEST(Simulation, SingleDeviceTrendsDown) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto cfg = small(Method::proposed, 50, seed);
        cfg.devices = 1;
        cfg.tasks = 1;
        const auto run = run_experiment(cfg);
        double head = 0, tail = 0;
        for (std::size_t r = 0; r < 10; ++r) {
            head += run.rounds[r].avg_loss;
            tail += run.rounds[40 + r].avg_loss;
        }
        EXPECT_LT(tail, head) << "seed " << seed;
    }
}

TEST(Simulation, DeterministicMetrics) {
    for (Method m : kAllMethods) {
        const auto cfg = small(m, 6, 11);
        EXPECT_EQ(metrics_csv(run_experiment(cfg)), metrics_csv(run_experiment(cfg))) << to_string(m);
    }
}

TEST(Simulation, BitsMatchClosedForm) {
    const auto cfg = small(Method::proposed, 6);
    const auto setup = prepare_experiment(cfg);
    const auto run = Simulation(setup).run();
    for (const auto& m : run.rounds) {
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < cfg.devices; ++i) {
            std::uint64_t expected = 0;
            for (std::size_t l = 0; l < cfg.layers; ++l) expected += setup.counts[i][l];
            expected *= cfg.radio.bits_per_parameter;
            EXPECT_TRUE(m.device_bits[i] == expected || m.device_bits[i] == 0);
            total += m.device_bits[i];
        }
        EXPECT_EQ(m.total_bits, total);
    }

    const auto lora = run_experiment(small(Method::lora_baseline, 3));
    const std::uint64_t per_device = cfg.layers * (cfg.width * cfg.rank * 2) * cfg.radio.bits_per_parameter;
    for (const auto& m : lora.rounds)
        for (auto b : m.device_bits) EXPECT_TRUE(b == per_device || b == 0);
}

TEST(Simulation, PlanBitsMatchRun) {
    for (Method m : {Method::proposed, Method::lora_baseline}) {
        const auto setup = prepare_experiment(small(m, 8));
        const std::string plan = plan_text(setup);
        const auto run = Simulation(setup).run();
        for (const auto& r : run.rounds) {
            const std::string key = "round" + std::to_string(r.round) + " = total_bits " + std::to_string(r.total_bits) +
                                    ", links " + std::to_string(r.links);
            EXPECT_NE(plan.find(key), std::string::npos) << key;
        }
    }
}

TEST(Simulation, CollisionBoundHoldsOnToyRun) {
    auto cfg = small(Method::proposed, 20);
    cfg.cluster.s_max = 0.5;
    const auto run = run_experiment(cfg);
    std::size_t checks = 0;
    for (const auto& m : run.rounds) {
        ASSERT_TRUE(m.has_bound);
        checks += m.bound_checks;
        EXPECT_EQ(m.bound_violations, 0u) << "round " << m.round;
        for (std::size_t l = 0; l < cfg.layers; ++l) EXPECT_LE(m.bound_lhs[l], m.bound_rhs[l]);
    }
    EXPECT_GT(checks, 0u);
}

TEST(Simulation, ClusterPlanRespectsCap) {
    auto cfg = small(Method::proposed, 0);
    cfg.devices = 8;
    cfg.tasks = 4;
    for (double s_max : {0.0, 0.1, 0.3, 1.0}) {
        cfg.cluster.s_max = s_max;
        const auto setup = prepare_experiment(cfg);
        std::size_t members = 0;
        for (const auto& c : setup.plan.clusters) {
            members += c.size();
            EXPECT_LE(group_collision(c, setup.sparsity).max_rate, s_max);
        }
        EXPECT_EQ(members, 8u);
        if (s_max == 0.0) {
            EXPECT_EQ(setup.plan.clusters.size(), 8u);
        }
    }
}

TEST(Simulation, SingleClusterInfeasibleRadioAborts) {
    auto cfg = small(Method::proposed_single_cluster, 1);
    cfg.radio.power_cap_w = 0.0;
    try {
        prepare_experiment(cfg);
        FAIL() << "expected InfeasibleError";
    } catch (const InfeasibleError& e) {
        EXPECT_NE(std::string(e.what()).find("power cap"), std::string::npos);
    }
}

TEST(Simulation, DivergenceReportsRound) {
    auto cfg = small(Method::full_finetune, 200);
    cfg.dense_learning_rate = 1e6;
    try {
        run_experiment(cfg);
        FAIL() << "expected NumericFailure";
    } catch (const NumericFailure& e) {
        EXPECT_NE(std::string(e.what()).find("round "), std::string::npos);
    }
}

TEST(Simulation, RunBaselineRejectsProposed) {
    EXPECT_THROW(run_baseline(small(Method::proposed, 1)), ConfigError);
    EXPECT_NO_THROW(run_baseline(small(Method::lori_baseline, 1)));
}

TEST(InterferenceProbe, SingleEntryIsDegenerate) {
    const auto run = run_experiment(small(Method::proposed, 2));
    AdapterBank one;
    one.upsert(run.banks[0].entries().front());
    const auto setup = prepare_experiment(small(Method::proposed, 0));
    const auto rep = interference_probe(one, setup.world.base, 0, 1, setup.world.eval[0].x, setup.world.eval[1].x, 0, 4);
    EXPECT_TRUE(rep.degenerate);
}

TEST(InterferenceProbe, RefinementAttenuatesMismatchedInputs) {
    auto cfg = small(Method::proposed, 20);
    cfg.cluster.s_max = 1.0;
    const auto setup = prepare_experiment(cfg);
    const auto run = Simulation(setup).run();
    AdapterBank bank;
    for (const auto& b : run.banks)
        for (const auto& e : b.entries()) bank.upsert(e);
    const auto& w = setup.world;
    std::vector<Vector> xa(w.eval[0].x.begin(), w.eval[0].x.end()), xb(w.eval[1].x.begin(), w.eval[1].x.end());
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto rep = interference_probe(bank, w.base, 0, 1, xa, xb, l, cfg.effective_top_k());
        ASSERT_FALSE(rep.degenerate);
        EXPECT_LT(rep.ratio_refined(), 1.0) << "layer " << l;
        EXPECT_LE(rep.ratio_refined(), rep.ratio_raw()) << "layer " << l;
    }
}
