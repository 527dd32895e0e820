// Runs the acceptance checks in order and prints one PASS/FAIL line for each.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace widen;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

const std::string configs = WIDEN_SOURCE_DIR "/configs/";

struct Outcome {
    bool ok = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_s; // 0: no runtime limit
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome metric_identities() {
    Rng rng(2024);
    double worst = 0.0;
    bool in_range = true;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t f = 1 + rng.below(8);
        Shape shape = rng.below(2) ? Shape{f, 1 + rng.below(6), 1 + rng.below(4), 1 + rng.below(4)}
                                   : Shape{f, 2 + rng.below(60)};
        if (shape.size() == 4 && shape[1] * shape[2] * shape[3] < 2) shape[1] = 2;
        const auto w = Tensor<double>::normal(shape, rng, rng.normal(0.0, 1.0), rng.uniform(1e-3, 10.0));
        const double a = std::exp(rng.uniform(-6.0, 6.0)), b = rng.normal(0.0, 100.0);
        auto affine = w, neg = w;
        for (auto& x : affine.values()) x = a * x + b;
        for (auto& x : neg.values()) x = -x;
        const auto other = Tensor<double>::normal(shape, rng);
        for (double c : self_resemblance(w, w).scores) worst = std::max(worst, std::abs(c));
        for (double c : self_resemblance(w, affine).scores) worst = std::max(worst, std::abs(c));
        for (double c : self_resemblance(w, neg).scores) worst = std::max(worst, std::abs(c - 2.0));
        for (double c : self_resemblance(w, other).scores) in_range = in_range && c >= 0.0 && c <= 2.0;
    }
    return {worst < 1e-9 && in_range, "worst identity error " + fmt("%.2e", worst) + (in_range ? "" : ", score out of [0,2]")};
}

Outcome gradient_fidelity() {
    std::ostringstream d;
    bool ok = true;
    for (bool cc : {false, true}) {
        const auto a = mixed_net(cc);
        Rng rng(cc ? 71 : 70);
        const auto s = random_store(a, rng);
        const auto x = Tensor<double>::normal({4, 2, 8, 8}, rng);
        const auto y = random_labels(4, 3, rng);
        const auto samples = gradient_check(a, s, x, y, 200, rng);
        std::size_t good = 0;
        double worst = 0.0;
        for (const auto& g : samples) {
            good += g.rel_error < 1e-4;
            worst = std::max(worst, g.rel_error);
        }
        ok = ok && good >= 198 && worst < 1e-2;
        d << (cc ? " conv head " : "linear head ") << good << "/200 below 1e-4, worst " << fmt("%.2e", worst) << ";";
    }
    return {ok, d.str()};
}

Outcome decay_invariance() {
    const auto a = load_arch(configs + "toy-wide.json");
    Rng rng(11);
    auto s = he_init<double>(a, rng);
    const auto snap = snapshot_refresh(s);
    TrainConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 5e-4;
    const auto g = zeros_like(s);
    auto v = zeros_like(s);
    double worst = 0.0;
    for (int step = 0; step < 100; ++step) {
        sgd_step(s, g, v, cfg, 0);
        for (const auto& r : self_resemblance_all(a, s, snap))
            for (double c : r.scores) worst = std::max(worst, c);
    }
    return {worst < 1e-9, "max c after 100 steps " + fmt("%.2e", worst)};
}

Outcome expansion_scales() {
    std::ostringstream d;
    std::vector<double> means;
    bool spread_ok = true;
    for (const char* name : {"expand-easy", "expand-hard"}) {
        const auto cfg = harness::load_config(configs + "experiments/" + name + ".json");
        const auto data = harness::load_data<double>(cfg.data);
        std::vector<double> counts;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(seed);
            counts.push_back(static_cast<double>(param_count(run_expansion(cfg.arch, cfg.train, cfg.expansion, data.train, rng).arch)));
        }
        double mean = 0.0;
        for (double c : counts) mean += c / 5.0;
        double dev = 0.0;
        for (double c : counts) dev = std::max(dev, std::abs(c - mean) / mean);
        spread_ok = spread_ok && dev <= 0.30;
        means.push_back(mean);
        d << name << " mean " << fmt("%.0f", mean) << " max deviation " << fmt("%.1f%%", 100 * dev) << "; ";
    }
    return {spread_ok && means[0] < means[1], d.str()};
}

struct Trained {
    harness::RunConfig cfg;
    TrainTest<double> data;
    TrainResult<double> r;
};

Trained train_experiment(const std::string& name) {
    Trained t;
    t.cfg = harness::load_config(configs + "experiments/" + name + ".json");
    t.data = harness::load_data<double>(t.cfg.data);
    Rng rng(t.cfg.seed);
    t.r = train(t.cfg.arch, t.cfg.train, t.data.train, rng);
    return t;
}

PruneCurve curve_of(const Trained& t, Metric m, std::size_t max_prunes) {
    PruneOptions opt;
    opt.max_prunes = max_prunes;
    opt.bn = {t.cfg.train.bn_epsilon, 0.1};
    return prune_curve(t.cfg.arch, t.r.store, std::optional{snapshot_refresh(t.r.init)}, t.data.train, t.data.test, m, opt);
}

Outcome pruning_dichotomy() {
    std::ostringstream d;
    bool ok = true;
    const auto wide = train_experiment("train-toy-wide");
    for (auto m : {Metric::self_resemblance, Metric::l1_norm, Metric::mean_activation}) {
        const auto c = curve_of(wide, m, 40);
        const auto n = prunable_prefix(c, 0.01);
        ok = ok && 4 * n >= c.total_features;
        d << to_string(m) << " " << n << "/" << c.total_features << "; ";
    }
    const auto narrow = train_experiment("train-toy-narrow");
    const auto c = curve_of(narrow, Metric::self_resemblance, 1);
    const double drop = c.points[0].accuracy - c.points[1].accuracy;
    ok = ok && drop > 0.01;
    d << "narrow first prune drop " << fmt("%.1f points", 100 * drop);
    return {ok, d.str()};
}

Outcome disabled_equals_train() {
    const auto cfg = harness::load_config(configs + "experiments/expand-easy.json");
    const auto data = harness::load_data<double>(cfg.data);
    const auto fixed = with_uniform_width(cfg.arch, 5);
    Rng r1(11), r2(11);
    const auto grown = run_expansion(fixed, cfg.train, ExpansionConfig::disabled(), data.train, r1);
    const auto plain = train(fixed, cfg.train, data.train, r2);
    bool ok = grown.events.empty() && grown.store == plain.store && grown.snapshot.store == plain.init &&
              grown.epochs.size() == plain.epoch_loss.size();
    for (std::size_t k = 0; ok && k < plain.epoch_loss.size(); ++k) ok = grown.epochs[k].train_loss == plain.epoch_loss[k];
    return {ok, std::to_string(plain.epoch_loss.size()) + " epochs compared"};
}

Outcome pruning_oracle() {
    double worst = 0.0;
    for (std::size_t layer : {0u, 4u})
        for (std::size_t f : {0u, 1u, 2u}) {
            Rng rng(40 + layer + f);
            worst = std::max(worst, mixed_net_prune_gap(layer, f, 50, rng));
        }
    return {worst < 1e-10, "max logit gap " + fmt("%.2e", worst)};
}

bool same_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& names, std::string& bad) {
    for (const auto& n : names)
        if (harness::read_text((a / n).string()) != harness::read_text((b / n).string())) {
            bad = n;
            return false;
        }
    return true;
}

Outcome replay() {
    const auto root = fs::temp_directory_path() / "widen_acceptance";
    fs::remove_all(root);
    std::string bad;
    bool ok = true;
    std::size_t svgs = 0;
    for (const char* name : {"expand-easy", "train-toy-narrow"}) {
        auto cfg = harness::load_config(configs + "experiments/" + name + ".json");
        cfg.seed = 3;
        const auto a = root / "a" / name, b = root / "b" / name;
        const bool expand = std::string(name).rfind("expand", 0) == 0;
        for (const auto& out : {a, b}) expand ? harness::cmd_expand(cfg, out) : harness::cmd_train(cfg, out);
        ok = ok && same_files(a, b, {"record.json", "events.jsonl", "params.bin", "init.bin", "arch.json"}, bad);
        const auto pa = harness::cmd_plot({(a / "events.jsonl").string()}, a / "plots");
        const auto pb = harness::cmd_plot({(b / "events.jsonl").string()}, b / "plots");
        ok = ok && pa.size() == pb.size();
        for (std::size_t k = 0; ok && k < pa.size(); ++k, ++svgs)
            if (harness::read_text(pa[k].string()) != harness::read_text(pb[k].string())) {
                ok = false;
                bad = pa[k].filename().string();
            }
    }
    fs::remove_all(root);
    return {ok, ok ? std::to_string(svgs) + " SVGs identical" : "differs: " + bad};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"metric identities", 10, metric_identities},
        {"gradient fidelity", 60, gradient_fidelity},
        {"decay invariance", 0, decay_invariance},
        {"expansion scales with difficulty", 1800, expansion_scales},
        {"pruning dichotomy", 600, pruning_dichotomy},
        {"disabled expansion equals training", 0, disabled_equals_train},
        {"pruning structural oracle", 0, pruning_oracle},
        {"replay", 0, replay},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto& c = criteria[k];
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s == 0 || secs < c.budget_s;
        if (!in_time) o.detail += " over the " + fmt("%.0f s budget", c.budget_s);
        const bool ok = o.ok && in_time;
        failed += !ok;
        std::printf("%s %zu %s (%.1f s): %s\n", ok ? "PASS" : "FAIL", k + 1, c.name.c_str(), secs, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
