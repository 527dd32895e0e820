#include <gtest/gtest.h>

#include <algorithm>

#include <numeric>

#include "support.hpp"

using namespace widen;
using namespace testing_support;

namespace {

ImportanceVector scores(std::vector<double> c, std::vector<bool> degenerate = {}) {
    ImportanceVector v;
    v.scores = std::move(c);
    v.degenerate = degenerate.empty() ? std::vector<bool>(v.scores.size(), false) : std::move(degenerate);
    return v;
}

harness::RunConfig experiment(const std::string& name) {
    return harness::load_config(std::string(WIDEN_SOURCE_DIR "/configs/experiments/") + name + ".json");
}

// Small, quick expansion setup on the easy synthetic task.
struct QuickRun {
    ArchSpec arch = load_arch(WIDEN_SOURCE_DIR "/configs/toy.json");
    TrainConfig train;
    ExpansionConfig exp;
    TrainTest<double> data;

    QuickRun() {
        SyntheticTaskSpec s;
        s.train_size = 128;
        s.test_size = 32;
        s.noise = 0.6;
        s.clusters = 2;
        s.seed = 100;
        data = gen_synthetic<double>(s);
        train.lr0 = 0.005;
        train.batch_size = 32;
        train.epochs = 4;
        train.schedule = {{2, 0.2}};
        exp.epsilon = 2e-5;
        exp.f_exp = 4;
        exp.max_width = 64;
    }
};

std::size_t mean_params(const std::string& config, const std::vector<std::uint64_t>& seeds) {
    auto cfg = experiment(config);
    const auto data = harness::load_data<double>(cfg.data);
    std::size_t total = 0;
    for (auto seed : seeds) {
        Rng rng(seed);
        total += param_count(run_expansion(cfg.arch, cfg.train, cfg.expansion, data.train, rng).arch);
    }
    return total / seeds.size();
}

} // namespace

TEST(ShouldExpand, AllFeaturesMoved) { EXPECT_TRUE(should_expand(scores({0.5, 0.3}), 1e-6)); }

TEST(ShouldExpand, OneFeatureUnchanged) { EXPECT_FALSE(should_expand(scores({0.5, 1e-9}), 1e-6)); }

TEST(ShouldExpand, NothingScorableNeverExpands) {
    EXPECT_FALSE(should_expand(scores({}), 1e-6));
    EXPECT_FALSE(should_expand(scores({0.0, 0.0}, {true, true}), 1e-6));
    // degenerate features do not block the rest
    EXPECT_TRUE(should_expand(scores({0.0, 0.4}, {true, false}), 1e-6));
}

TEST(ShouldExpand, PrintedConditionUsesTheMaximum) {
    EXPECT_TRUE(should_expand(scores({0.5, 1e-9}), 1e-6, Condition::printed));
    EXPECT_FALSE(should_expand(scores({0.5, 1.2}), 1e-6, Condition::printed));
}

TEST(ExpandLayer, WidthOneGrowsByFExp) {
    auto a = load_arch(WIDEN_SOURCE_DIR "/configs/toy.json");
    const auto out = expand_layer(a, 0, 8);
    EXPECT_TRUE(out.expanded);
    EXPECT_EQ(out.arch.layers[0].width, 9u);
    EXPECT_EQ(plan(out.arch).layers[4].weight[1], 9u); // next conv sees 9 input channels
}

TEST(ExpandLayer, CoupledGroupGrowsTogether) {
    auto a = arch_from_json({{"input_shape", {1, 6, 6}},
                             {"num_classes", 2},
                             {"layers",
                              {{{"kind", "conv"}, {"width", 2}, {"kernel", 3}, {"padding", 1}},
                               {{"kind", "relu"}},
                               {{"kind", "conv"}, {"width", 3}, {"kernel", 3}, {"padding", 1}, {"couple_group", 1}},
                               {{"kind", "relu"}},
                               {{"kind", "conv"}, {"width", 3}, {"kernel", 3}, {"padding", 1}, {"couple_group", 1}},
                               {{"kind", "flatten"}},
                               {{"kind", "linear"}}}}});
    const auto out = expand_layer(a, 2, 4);
    EXPECT_EQ(out.arch.layers[2].width, 7u);
    EXPECT_EQ(out.arch.layers[4].width, 7u);
    EXPECT_EQ(out.arch.layers[0].width, 2u);
}

TEST(ExpandLayer, CapSuppresses) {
    auto a = with_uniform_width(load_arch(WIDEN_SOURCE_DIR "/configs/toy.json"), 9);
    const auto out = expand_layer(a, 0, 8, 16);
    EXPECT_TRUE(out.suppressed);
    EXPECT_FALSE(out.expanded);
    EXPECT_EQ(out.arch, a);
}

TEST(ExpandLayer, ClassifierIsNotExpandable) {
    auto a = load_arch(WIDEN_SOURCE_DIR "/configs/toy.json");
    EXPECT_THROW(expand_layer(a, a.classifier_index(), 1), ConfigError);
    EXPECT_THROW(expand_layer(a, 1, 1), ConfigError);
}

TEST(ExpansionConfigJson, Validation) {
    EXPECT_THROW(expansion_config_from_json({{"epsilon", 0.0}}), ConfigError);
    EXPECT_THROW(expansion_config_from_json({{"f_exp", 0}}), ConfigError);
    EXPECT_THROW(expansion_config_from_json({{"condition", "sideways"}}), ConfigError);
    EXPECT_FALSE(expansion_config_from_json({{"epsilon", "inf"}}).enabled());
}

TEST(RunExpansion, RequiresWidthOneStart) {
    QuickRun q;
    Rng rng(1);
    EXPECT_THROW(run_expansion(with_uniform_width(q.arch, 2), q.train, q.exp, q.data.train, rng), ConfigError);
}

TEST(RunExpansion, SeparableBlobPairNeedsNoExpansion) {
    auto cfg = experiment("expand-blobs");
    const auto data = harness::load_data<double>(cfg.data);
    Rng rng(cfg.seed);
    const auto r = run_expansion(cfg.arch, cfg.train, cfg.expansion, data.train, rng);
    EXPECT_TRUE(r.events.empty());
    EXPECT_EQ(r.state.reset_count, 0u);
    EXPECT_EQ(r.state.t, cfg.train.epochs);
    for (auto w : r.arch.widths()) EXPECT_EQ(w, 1u);
    EXPECT_GT(evaluate(r.arch, r.store, data.test).accuracy, 0.95);
}

TEST(RunExpansion, HistoryAndInvariants) {
    QuickRun q;
    Rng rng(3);
    const auto r = run_expansion(q.arch, q.train, q.exp, q.data.train, rng);
    ASSERT_FALSE(r.events.empty());
    EXPECT_TRUE(r.state.terminated);
    EXPECT_EQ(r.state.t, q.train.epochs);
    EXPECT_EQ(r.state.width_history.size(), r.state.reset_count + 1);
    for (std::size_t k = 1; k < r.state.width_history.size(); ++k)
        for (std::size_t l = 0; l < r.state.width_history[k].size(); ++l)
            EXPECT_GE(r.state.width_history[k][l], r.state.width_history[k - 1][l]);
    for (const auto& e : r.events)
        if (!e.suppressed) EXPECT_EQ(e.new_width, e.old_width + q.exp.f_exp);
    for (const auto& e : r.epochs)
        if (e.reset) EXPECT_EQ(e.stable_epochs, 0u);
    // the final epochs are an uninterrupted schedule on the final architecture
    ASSERT_GE(r.epochs.size(), q.train.epochs);
    for (std::size_t k = r.epochs.size() - q.train.epochs; k < r.epochs.size(); ++k) {
        EXPECT_FALSE(r.epochs[k].reset);
        EXPECT_EQ(r.epochs[k].widths, r.arch.widths());
    }
    EXPECT_NO_THROW(check_store(r.arch, r.store));
    EXPECT_NO_THROW(check_store(r.arch, r.snapshot.store));
}

TEST(RunExpansion, FirstEvaluationAfterResetScoresZero) {
    // every expansion fires strictly after the first step of a fresh initialization
    QuickRun q;
    Rng rng(3);
    const auto r = run_expansion(q.arch, q.train, q.exp, q.data.train, rng);
    // layers expanded by the same check share its step
    std::size_t last = 0, check = 0;
    std::vector<std::size_t> seen;
    for (const auto& e : r.events) {
        if (e.suppressed) continue;
        if (e.step != check) {
            EXPECT_GT(e.step, last);
            last = check = e.step;
            seen.clear();
        }
        EXPECT_EQ(std::count(seen.begin(), seen.end(), e.layers[0]), 0);
        seen.push_back(e.layers[0]);
        EXPECT_GT(e.min_score, q.exp.epsilon);
    }
    ASSERT_FALSE(r.events.empty());
    EXPECT_GT(r.events.front().step, 0u);
    // a fresh store scores exactly zero against its own snapshot
    Rng r2(9);
    const auto s = he_init<double>(r.arch, r2);
    for (const auto& v : self_resemblance_all(r.arch, s, snapshot_refresh(s)))
        for (double c : v.scores) EXPECT_NEAR(c, 0.0, 1e-12);
}

TEST(RunExpansion, ReplayIsIdentical) {
    QuickRun q;
    Rng r1(5), r2(5);
    const auto a = run_expansion(q.arch, q.train, q.exp, q.data.train, r1);
    const auto b = run_expansion(q.arch, q.train, q.exp, q.data.train, r2);
    ASSERT_EQ(a.events.size(), b.events.size());
    for (std::size_t k = 0; k < a.events.size(); ++k) EXPECT_EQ(to_json(a.events[k]), to_json(b.events[k]));
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    for (std::size_t k = 0; k < a.epochs.size(); ++k) EXPECT_EQ(to_json(a.epochs[k]), to_json(b.epochs[k]));
    EXPECT_EQ(a.store, b.store);
}

TEST(RunExpansion, DisabledMatchesPlainTraining) {
    QuickRun q;
    const auto fixed = with_uniform_width(q.arch, 5);
    Rng r1(11), r2(11);
    const auto grown = run_expansion(fixed, q.train, ExpansionConfig::disabled(), q.data.train, r1);
    const auto plain = train(fixed, q.train, q.data.train, r2);
    EXPECT_TRUE(grown.events.empty());
    EXPECT_EQ(grown.store, plain.store);
    ASSERT_EQ(grown.epochs.size(), plain.epoch_loss.size());
    for (std::size_t k = 0; k < plain.epoch_loss.size(); ++k) EXPECT_EQ(grown.epochs[k].train_loss, plain.epoch_loss[k]);
}

TEST(RunExpansion, CoupledLayersStayEqual) {
    auto a = arch_from_json({{"input_shape", {1, 8, 8}},
                             {"num_classes", 2},
                             {"layers",
                              {{{"kind", "conv"}, {"width", 1}, {"kernel", 3}, {"padding", 1}, {"couple_group", 1}},
                               {{"kind", "batchnorm"}},
                               {{"kind", "relu"}},
                               {{"kind", "conv"}, {"width", 1}, {"kernel", 3}, {"padding", 1}, {"couple_group", 1}},
                               {{"kind", "batchnorm"}},
                               {{"kind", "relu"}},
                               {{"kind", "flatten"}},
                               {{"kind", "linear"}}}}});
    QuickRun q;
    Rng rng(2);
    const auto r = run_expansion(a, q.train, q.exp, q.data.train, rng);
    for (const auto& w : r.state.width_history) {
        ASSERT_EQ(w.size(), 2u);
        EXPECT_EQ(w[0], w[1]);
    }
    for (const auto& e : r.events) EXPECT_EQ(e.layers, (std::vector<std::size_t>{0, 3}));
}

TEST(RunExpansion, CapIsLoggedOnce) {
    QuickRun q;
    q.exp.max_width = 5;
    Rng rng(3);
    const auto r = run_expansion(q.arch, q.train, q.exp, q.data.train, rng);
    std::size_t suppressed = 0;
    for (const auto& e : r.events) {
        suppressed += e.suppressed;
        if (e.suppressed) EXPECT_EQ(e.new_width, e.old_width);
    }
    for (auto w : r.arch.widths()) EXPECT_LE(w, 5u);
    EXPECT_LE(suppressed, r.arch.expandable_layers().size());
}

TEST(RunExpansion, PrintedConditionRunsToo) {
    QuickRun q;
    q.exp.condition = Condition::printed;
    Rng rng(3);
    const auto r = run_expansion(q.arch, q.train, q.exp, q.data.train, rng);
    EXPECT_TRUE(r.state.terminated);
    EXPECT_EQ(r.state.t, q.train.epochs);
}

TEST(RunExpansion, HarderTaskGrowsLarger) {
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    const auto easy = mean_params("expand-easy", seeds);
    const auto hard = mean_params("expand-hard", seeds);
    EXPECT_GT(hard, easy);
}
