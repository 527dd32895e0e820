#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "expansion.hpp"
#include "pruning.hpp"
#include "svg.hpp"
#include "trainer.hpp"

namespace widen::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
    std::string kind = "synthetic"; // synthetic | mnist
    SyntheticTaskSpec synthetic;
    std::string train_images, train_labels, test_images, test_labels;
    bool cifar_layout = false;
    std::optional<std::size_t> limit_train, limit_test;
    bool normalize = true;
};

struct PruneConfig {
    std::string checkpoint;
    std::vector<Metric> metrics{Metric::self_resemblance, Metric::l1_norm, Metric::mean_activation};
    std::optional<std::size_t> only_layer;
    std::optional<std::size_t> max_prunes;
    double tolerance = 0.01;
    bool recompute_bn = true;
};

struct RunConfig {
    json raw; // resolved configuration, the input of the config hash
    std::string base_dir;
    ArchSpec arch;
    DataConfig data;
    TrainConfig train;
    ExpansionConfig expansion;
    PruneConfig prune;
    std::uint64_t seed = 1;
};

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

inline std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute() || base.empty()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

inline DataConfig data_config_from_json(const json& j, const std::string& base) {
    DataConfig d;
    try {
        d.kind = j.value("kind", d.kind);
        d.normalize = j.value("normalize", d.normalize);
        if (j.contains("limit_train")) d.limit_train = j.at("limit_train").get<std::size_t>();
        if (j.contains("limit_test")) d.limit_test = j.at("limit_test").get<std::size_t>();
        if (d.kind == "synthetic") {
            d.synthetic = synthetic_spec_from_json(j);
        } else if (d.kind == "mnist") {
            d.train_images = resolve(base, j.at("train_images").get<std::string>());
            d.train_labels = resolve(base, j.at("train_labels").get<std::string>());
            d.test_images = resolve(base, j.at("test_images").get<std::string>());
            d.test_labels = resolve(base, j.at("test_labels").get<std::string>());
            d.cifar_layout = j.value("cifar_layout", false);
        } else {
            throw ConfigError("data.kind: unknown kind '" + d.kind + "' (expected synthetic or mnist)");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("data: ") + e.what());
    }
    return d;
}

inline PruneConfig prune_config_from_json(const json& j, const std::string& base) {
    PruneConfig p;
    try {
        if (j.contains("checkpoint")) p.checkpoint = resolve(base, j.at("checkpoint").get<std::string>());
        if (j.contains("metrics")) {
            p.metrics.clear();
            for (const auto& m : j.at("metrics")) p.metrics.push_back(metric_from_string(m.get<std::string>()));
        }
        if (j.contains("only_layer")) p.only_layer = j.at("only_layer").get<std::size_t>();
        if (j.contains("max_prunes")) p.max_prunes = j.at("max_prunes").get<std::size_t>();
        p.tolerance = j.value("tolerance", p.tolerance);
        p.recompute_bn = j.value("recompute_bn", p.recompute_bn);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("prune: ") + e.what());
    }
    if (p.metrics.empty()) throw ConfigError("prune.metrics: at least one metric required");
    if (!(p.tolerance >= 0.0)) throw ConfigError("prune.tolerance: must be >= 0");
    return p;
}

/// Parse a run configuration. `arch` may be a path (relative to `base_dir`) or an
/// inline architecture object; relative data and checkpoint paths resolve the same way.
inline RunConfig config_from_json(const json& j, const std::string& base_dir = "") {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    RunConfig c;
    c.base_dir = base_dir;
    c.raw = j;
    if (!j.contains("arch")) throw ConfigError("config: missing 'arch'");
    const auto& a = j.at("arch");
    if (a.is_string()) {
        c.arch = load_arch(resolve(base_dir, a.get<std::string>()));
        c.raw["arch"] = arch_to_json(c.arch);
    } else {
        c.arch = arch_from_json(a);
    }
    c.data = data_config_from_json(j.value("data", json::object()), base_dir);
    c.train = train_config_from_json(j.value("train", json::object()));
    c.expansion = expansion_config_from_json(j.value("expansion", json::object()));
    c.prune = prune_config_from_json(j.value("prune", json::object()), base_dir);
    try {
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("seed: ") + e.what());
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path().string());
}

/// FNV-1a over the compact dump of the resolved configuration, without the seed.
inline std::string config_hash(const RunConfig& c) {
    json j = c.raw;
    j.erase("seed");
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename T = double>
TrainTest<T> load_data(const DataConfig& d) {
    TrainTest<T> tt;
    if (d.kind == "synthetic") {
        tt = gen_synthetic<T>(d.synthetic);
    } else {
        MnistOptions opt;
        opt.cifar_layout = d.cifar_layout;
        tt.train = load_mnist_idx<T>(d.train_images, d.train_labels, opt);
        tt.test = load_mnist_idx<T>(d.test_images, d.test_labels, opt);
        tt.train.split = "train";
        tt.test.split = "test";
    }
    auto limit = [](Dataset<T>& ds, std::optional<std::size_t> n) {
        if (!n || *n >= ds.size()) return;
        std::vector<std::size_t> idx(*n);
        for (std::size_t k = 0; k < *n; ++k) idx[k] = k;
        auto b = gather(ds, idx);
        ds.images = std::move(b.images);
        ds.labels = std::move(b.labels);
    };
    limit(tt.train, d.limit_train);
    limit(tt.test, d.limit_test);
    if (d.normalize) {
        auto test = normalize(tt.test, tt.train);
        tt.train = normalize(tt.train, tt.train);
        tt.test = std::move(test);
    }
    return tt;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> widths;
    std::size_t params = 0;
};

struct RunRecord {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string mode; // train | expand | prune
    std::string arch_name;
    EvalResult init;  // evaluation before the first step
    std::vector<EpochMetrics> epochs;
    std::vector<std::size_t> final_widths;
    std::size_t final_params = 0;
    EvalResult final_eval;
    json extra = json::object();
    double wall_time_s = 0.0;
    std::map<std::string, std::string> artifacts; // relative to the output directory
};

/// Wall time is left out of the record file so that replays compare byte for byte;
/// it is written to timing.json next to it.
inline json to_json(const RunRecord& r, bool with_time = false) {
    json ep = json::array();
    for (const auto& e : r.epochs)
        ep.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"widths", e.widths}, {"params", e.params}});
    json j{{"config_hash", r.config_hash},
           {"seed", r.seed},
           {"mode", r.mode},
           {"arch", r.arch_name},
           {"init", {{"accuracy", r.init.accuracy}, {"loss", r.init.loss}}},
           {"epochs", ep},
           {"final", {{"widths", r.final_widths}, {"params", r.final_params}, {"accuracy", r.final_eval.accuracy}, {"loss", r.final_eval.loss}}},
           {"artifacts", r.artifacts}};
    if (!r.extra.empty()) j["extra"] = r.extra;
    if (with_time) j["wall_time_s"] = r.wall_time_s;
    return j;
}

inline RunRecord record_from_json(const json& j) {
    RunRecord r;
    try {
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.mode = j.at("mode").get<std::string>();
        r.arch_name = j.value("arch", "");
        r.init.accuracy = j.at("init").at("accuracy").get<double>();
        r.init.loss = j.at("init").at("loss").get<double>();
        for (const auto& e : j.at("epochs")) {
            r.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(), e.at("accuracy").get<double>(),
                                e.at("widths").get<std::vector<std::size_t>>(), e.at("params").get<std::size_t>()});
        }
        const auto& f = j.at("final");
        r.final_widths = f.at("widths").get<std::vector<std::size_t>>();
        r.final_params = f.at("params").get<std::size_t>();
        r.final_eval.accuracy = f.at("accuracy").get<double>();
        r.final_eval.loss = f.at("loss").get<double>();
        r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
        r.extra = j.value("extra", json::object());
        r.wall_time_s = j.value("wall_time_s", 0.0);
    } catch (const json::exception& e) {
        throw ParseError(std::string("run record: ") + e.what());
    }
    return r;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void write_checkpoint(const fs::path& out, const ArchSpec& arch, const ParamStore<T>& store, const ParamStore<T>& init,
                      RunRecord& rec) {
    write_text(out / "arch.json", dump(arch_to_json(arch)));
    save_store((out / "params.bin").string(), store);
    save_store((out / "init.bin").string(), init);
    rec.artifacts["arch"] = "arch.json";
    rec.artifacts["params"] = "params.bin";
    rec.artifacts["init"] = "init.bin";
}

inline void finish(const fs::path& out, RunRecord& rec, std::chrono::steady_clock::time_point t0) {
    rec.artifacts["record"] = "record.json";
    rec.wall_time_s = seconds_since(t0);
    write_text(out / "record.json", dump(to_json(rec)));
    write_text(out / "timing.json", dump(json{{"wall_time_s", rec.wall_time_s}}));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Fixed-architecture training. Writes a checkpoint (arch.json, params.bin, init.bin),
/// an epoch log and the record to `out`.
template <typename T = double>
RunRecord cmd_train(const RunConfig& cfg, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = load_data<T>(cfg.data);
    plan(cfg.arch);
    cfg.train.validate();
    fs::create_directories(out);

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = cfg.seed;
    rec.mode = "train";
    rec.arch_name = cfg.arch.name;
    const BatchNormSettings bn{cfg.train.bn_epsilon, 0.1};

    Rng rng(cfg.seed);
    auto store = he_init<T>(cfg.arch, rng);
    const auto init = store;
    auto velocity = zeros_like(store);
    rec.init = evaluate(cfg.arch, store, data.test, 256, bn);

    std::ofstream log(out / "events.jsonl", std::ios::binary);
    const auto widths = cfg.arch.widths();
    const auto params = param_count(cfg.arch);
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
        const auto er = train_epoch(cfg.arch, store, velocity, cfg.train, data.train, rng, e, [] { return false; });
        const auto ev = evaluate(cfg.arch, store, data.test, 256, bn);
        rec.epochs.push_back({e, er.mean_loss, ev.accuracy, widths, params});
        EpochSummary s;
        s.epoch = e;
        s.t = e + 1;
        s.widths = widths;
        s.params = params;
        s.train_loss = er.mean_loss;
        s.stable_epochs = e + 1;
        s.accuracy = ev.accuracy;
        log << to_json(s).dump() << "\n";
    }
    log.close();
    rec.artifacts["events"] = "events.jsonl";
    rec.final_widths = widths;
    rec.final_params = params;
    rec.final_eval = cfg.train.epochs ? evaluate(cfg.arch, store, data.test, 256, bn) : rec.init;
    detail::write_checkpoint(out, cfg.arch, store, init, rec);
    detail::finish(out, rec, t0);
    return rec;
}

/// Width expansion from a width-1 architecture. Writes the event log, the final
/// topology and weights (init.bin is the snapshot of the last re-initialization).
template <typename T = double>
RunRecord cmd_expand(const RunConfig& cfg, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = load_data<T>(cfg.data);
    fs::create_directories(out);

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = cfg.seed;
    rec.mode = "expand";
    rec.arch_name = cfg.arch.name;
    const BatchNormSettings bn{cfg.train.bn_epsilon, 0.1};

    std::ofstream log(out / "events.jsonl", std::ios::binary);
    ExpansionObserver<T> obs;
    obs.on_event = [&](const ExpansionEvent& e) { log << to_json(e).dump() << "\n"; };
    obs.on_epoch = [&](EpochSummary& s, const ArchSpec& arch, const ParamStore<T>& store) {
        s.accuracy = evaluate(arch, store, data.test, 256, bn).accuracy;
        log << to_json(s).dump() << "\n";
        rec.epochs.push_back({s.epoch, s.train_loss, *s.accuracy, s.widths, s.params});
    };
    Rng rng(cfg.seed);
    {
        // evaluation of the starting network, drawn from a copy so the run stream is untouched
        Rng probe = rng;
        const auto store0 = he_init<T>(cfg.arch, probe);
        rec.init = evaluate(cfg.arch, store0, data.test, 256, bn);
    }
    auto r = run_expansion(cfg.arch, cfg.train, cfg.expansion, data.train, rng, obs);
    log.close();
    rec.artifacts["events"] = "events.jsonl";
    rec.final_widths = r.arch.widths();
    rec.final_params = param_count(r.arch);
    rec.final_eval = evaluate(r.arch, r.store, data.test, 256, bn);
    std::size_t expansions = 0, suppressed = 0;
    for (const auto& e : r.events) (e.suppressed ? suppressed : expansions) += 1;
    rec.extra = {{"expansions", expansions},
                 {"suppressed", suppressed},
                 {"resets", r.state.reset_count},
                 {"steps", r.state.steps},
                 {"epochs_run", r.state.epochs_run},
                 {"condition", to_string(cfg.expansion.condition)}};
    detail::write_checkpoint(out, r.arch, r.store, r.snapshot.store, rec);
    detail::finish(out, rec, t0);
    return rec;
}

template <typename T = double>
struct Checkpoint {
    ArchSpec arch;
    ParamStore<T> store;
    std::optional<ParamStore<T>> init;
};

template <typename T = double>
Checkpoint<T> load_checkpoint(const fs::path& dir) {
    if (dir.empty()) throw ConfigError("prune.checkpoint: not set");
    Checkpoint<T> c;
    c.arch = load_arch((dir / "arch.json").string());
    c.store = load_store<T>((dir / "params.bin").string());
    check_store(c.arch, c.store);
    if (fs::exists(dir / "init.bin")) {
        c.init = load_store<T>((dir / "init.bin").string());
        check_store(c.arch, *c.init);
    }
    return c;
}

/// Greedy pruning curves of one checkpoint under each configured metric. Writes
/// prune_<metric>.csv / .json and a record whose epochs list is empty.
template <typename T = double>
RunRecord cmd_prune(const RunConfig& cfg, const fs::path& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ck = load_checkpoint<T>(cfg.prune.checkpoint);
    for (auto m : cfg.prune.metrics)
        if (m == Metric::self_resemblance && !ck.init)
            throw ConfigError(cfg.prune.checkpoint + ": self_resemblance needs init.bin (the initialization snapshot)");
    const auto data = load_data<T>(cfg.data);
    fs::create_directories(out);

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = cfg.seed;
    rec.mode = "prune";
    rec.arch_name = ck.arch.name;
    PruneOptions opt;
    opt.only_layer = cfg.prune.only_layer;
    opt.max_prunes = cfg.prune.max_prunes;
    opt.recompute_bn = cfg.prune.recompute_bn;
    opt.bn = BatchNormSettings{cfg.train.bn_epsilon, 0.1};

    json summary = json::object();
    for (auto m : cfg.prune.metrics) {
        std::optional<InitSnapshot<T>> snap;
        if (ck.init) snap = InitSnapshot<T>{*ck.init};
        const auto curve = prune_curve(ck.arch, ck.store, snap, data.train, data.test, m, opt);
        const std::string stem = std::string("prune_") + to_string(m);
        write_text(out / (stem + ".csv"), to_csv(curve));
        write_text(out / (stem + ".json"), dump(to_json(curve)));
        rec.artifacts[stem + "_csv"] = stem + ".csv";
        rec.artifacts[stem + "_json"] = stem + ".json";
        const auto n = prunable_prefix(curve, cfg.prune.tolerance);
        summary[to_string(m)] = {{"total_features", curve.total_features},
                                 {"prunable", n},
                                 {"prunable_fraction", curve.total_features ? double(n) / double(curve.total_features) : 0.0},
                                 {"first_drop", curve.points.size() > 1 ? curve.points[0].accuracy - curve.points[1].accuracy : 0.0},
                                 {"points", curve.points.size()}};
        if (rec.final_widths.empty()) {
            rec.init = {curve.points.front().accuracy, 0.0};
            rec.final_eval = rec.init;
        }
    }
    rec.final_widths = ck.arch.widths();
    rec.final_params = param_count(ck.arch);
    rec.extra = {{"tolerance", cfg.prune.tolerance}, {"curves", summary}};
    detail::finish(out, rec, t0);
    return rec;
}

// ---------------------------------------------------------------------------
// Plots and reports
// ---------------------------------------------------------------------------

struct EventLog {
    std::vector<EpochSummary> epochs;
    std::vector<ExpansionEvent> events;
};

inline EventLog parse_event_log(const std::string& text, const std::string& name = "events") {
    EventLog log;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = name + ":" + std::to_string(n) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where + "not valid JSON (" + e.what() + ")");
        }
        try {
            const auto type = j.at("type").get<std::string>();
            if (type == "epoch") {
                EpochSummary s;
                s.epoch = j.at("epoch").get<std::size_t>();
                s.t = j.value("t", std::size_t{0});
                s.widths = j.at("widths").get<std::vector<std::size_t>>();
                s.params = j.at("params").get<std::size_t>();
                s.train_loss = j.value("train_loss", 0.0);
                s.stable_epochs = j.value("stable_epochs", std::size_t{0});
                s.reset = j.value("reset", false);
                if (j.contains("accuracy")) s.accuracy = j.at("accuracy").get<double>();
                log.epochs.push_back(std::move(s));
            } else if (type == "expansion" || type == "suppressed") {
                ExpansionEvent e;
                e.step = j.at("step").get<std::size_t>();
                e.epoch = j.at("epoch").get<std::size_t>();
                e.layers = j.at("layers").get<std::vector<std::size_t>>();
                e.old_width = j.at("old_width").get<std::size_t>();
                e.new_width = j.at("new_width").get<std::size_t>();
                e.min_score = j.value("min_score", 0.0);
                e.suppressed = type == "suppressed";
                log.events.push_back(std::move(e));
            } else {
                throw ParseError(where + "unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError(where + e.what());
        }
    }
    return log;
}

struct CurveRow {
    std::size_t features_removed = 0;
    double accuracy = 0.0;
    std::size_t params = 0;
};

/// Rows of a prune CSV; the features_removed column must be strictly increasing.
inline std::vector<CurveRow> parse_curve_csv(const std::string& text, const std::string& name = "curve") {
    std::vector<CurveRow> rows;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (n == 1 && line.rfind("features_removed", 0) == 0) continue;
        const std::string where = name + ":" + std::to_string(n) + ": ";
        std::istringstream ls(line);
        std::string a, b, c, rest;
        if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') || std::getline(ls, rest, ','))
            throw ParseError(where + "expected 3 comma-separated fields");
        CurveRow r;
        try {
            std::size_t pos = 0;
            r.features_removed = std::stoul(a, &pos);
            if (pos != a.size()) throw std::invalid_argument(a);
            r.accuracy = std::stod(b, &pos);
            if (pos != b.size()) throw std::invalid_argument(b);
            r.params = std::stoul(c, &pos);
            if (pos != c.size()) throw std::invalid_argument(c);
        } catch (const std::logic_error&) {
            throw ParseError(where + "malformed number");
        }
        if (!rows.empty() && r.features_removed <= rows.back().features_removed)
            throw ParseError(where + "features_removed must increase monotonically");
        rows.push_back(r);
    }
    return rows;
}

/// Total parameters per epoch, one staircase series per log.
inline std::string params_plot(const std::vector<std::pair<std::string, EventLog>>& logs) {
    std::vector<svg::Series> series;
    for (const auto& [label, log] : logs) {
        svg::Series s;
        s.label = label;
        s.step = true;
        for (const auto& e : log.epochs) {
            s.x.push_back(static_cast<double>(e.epoch + 1));
            s.y.push_back(static_cast<double>(e.params));
        }
        series.push_back(std::move(s));
    }
    return svg::line_chart({"Total parameters", "epoch", "parameters"}, series);
}

/// Final width of every expandable layer; mean and standard deviation over the logs.
inline std::string widths_plot(const std::vector<std::pair<std::string, EventLog>>& logs) {
    std::size_t L = 0;
    for (const auto& [label, log] : logs)
        if (!log.epochs.empty()) L = std::max(L, log.epochs.back().widths.size());
    svg::Bars bars{"final width", std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
    std::size_t n = 0;
    for (const auto& [label, log] : logs) {
        if (log.epochs.empty()) continue;
        const auto& w = log.epochs.back().widths;
        if (w.size() != L) throw ParseError(label + ": layer count differs from the other logs");
        for (std::size_t l = 0; l < L; ++l) bars.values[l] += static_cast<double>(w[l]);
        ++n;
    }
    for (auto& v : bars.values) v /= std::max<std::size_t>(n, 1);
    for (const auto& [label, log] : logs) {
        if (log.epochs.empty()) continue;
        const auto& w = log.epochs.back().widths;
        for (std::size_t l = 0; l < L; ++l) bars.errors[l] += std::pow(static_cast<double>(w[l]) - bars.values[l], 2);
    }
    for (auto& e : bars.errors) e = std::sqrt(e / std::max<std::size_t>(n, 1));
    std::vector<std::string> cats;
    for (std::size_t l = 0; l < L; ++l) cats.push_back("L" + std::to_string(l + 1));
    return svg::bar_chart({"Layer widths", "layer", "features"}, cats, {bars});
}

inline std::string prune_plot(const std::vector<std::pair<std::string, std::vector<CurveRow>>>& curves) {
    std::vector<svg::Series> series;
    for (const auto& [label, rows] : curves) {
        svg::Series s;
        s.label = label;
        for (const auto& r : rows) {
            s.x.push_back(static_cast<double>(r.features_removed));
            s.y.push_back(100.0 * r.accuracy);
        }
        series.push_back(std::move(s));
    }
    return svg::line_chart({"Pruning", "features removed", "accuracy (%)"}, series);
}

/// Render panels from event logs (*.jsonl) and prune curves (*.csv). Returns the
/// files written, in a fixed order.
inline std::vector<fs::path> cmd_plot(const std::vector<std::string>& inputs, const fs::path& out) {
    std::vector<std::pair<std::string, EventLog>> logs;
    std::vector<std::pair<std::string, std::vector<CurveRow>>> curves;
    for (const auto& in : inputs) {
        const fs::path p(in);
        const auto text = read_text(in);
        const auto label = p.stem().string() == "events" && p.has_parent_path() ? p.parent_path().filename().string()
                                                                                 : p.stem().string();
        if (p.extension() == ".jsonl") logs.emplace_back(label, parse_event_log(text, in));
        else if (p.extension() == ".csv") curves.emplace_back(label, parse_curve_csv(text, in));
        else throw ConfigError(in + ": expected a .jsonl event log or a .csv prune curve");
    }
    fs::create_directories(out);
    std::vector<fs::path> written;
    if (!logs.empty()) {
        written.push_back(out / "params.svg");
        write_text(written.back(), params_plot(logs));
        written.push_back(out / "widths.svg");
        write_text(written.back(), widths_plot(logs));
    }
    if (!curves.empty()) {
        written.push_back(out / "prune.svg");
        write_text(written.back(), prune_plot(curves));
    }
    return written;
}

struct Stat {
    double mean = 0.0, stddev = 0.0;
};

inline Stat stat(const std::vector<double>& v) {
    Stat s;
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(v.size());
    for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
    return s;
}

/// Mean and standard deviation of final topology, parameters and accuracy.
inline json report(const std::vector<RunRecord>& recs) {
    if (recs.empty()) throw ConfigError("report: no records");
    const std::size_t L = recs.front().final_widths.size();
    std::vector<double> params, acc;
    std::vector<std::vector<double>> widths(L);
    json seeds = json::array();
    for (const auto& r : recs) {
        if (r.final_widths.size() != L) throw ConfigError("report: records have different layer counts");
        params.push_back(static_cast<double>(r.final_params));
        acc.push_back(r.final_eval.accuracy);
        for (std::size_t l = 0; l < L; ++l) widths[l].push_back(static_cast<double>(r.final_widths[l]));
        seeds.push_back(r.seed);
    }
    json wm = json::array(), ws = json::array();
    for (const auto& w : widths) {
        const auto s = stat(w);
        wm.push_back(s.mean);
        ws.push_back(s.stddev);
    }
    const auto ps = stat(params), as = stat(acc);
    double spread = 0.0;
    for (double p : params) spread = std::max(spread, std::abs(p - ps.mean) / ps.mean);
    return {{"runs", recs.size()},
            {"seeds", seeds},
            {"mode", recs.front().mode},
            {"widths_mean", wm},
            {"widths_std", ws},
            {"params_mean", ps.mean},
            {"params_std", ps.stddev},
            {"params_max_rel_dev", spread},
            {"accuracy_mean", as.mean},
            {"accuracy_std", as.stddev}};
}

inline std::string report_text(const json& r) {
    std::ostringstream s;
    char buf[160];
    s << "runs: " << r.at("runs").get<std::size_t>() << " (" << r.at("mode").get<std::string>() << ")\n";
    std::snprintf(buf, sizeof buf, "error: %.2f%% +- %.2f\n", 100.0 * (1.0 - r.at("accuracy_mean").get<double>()),
                  100.0 * r.at("accuracy_std").get<double>());
    s << buf;
    std::snprintf(buf, sizeof buf, "params: %.0f +- %.0f (max deviation %.1f%%)\n", r.at("params_mean").get<double>(),
                  r.at("params_std").get<double>(), 100.0 * r.at("params_max_rel_dev").get<double>());
    s << buf;
    s << "widths:";
    const auto& m = r.at("widths_mean");
    const auto& d = r.at("widths_std");
    for (std::size_t l = 0; l < m.size(); ++l) {
        std::snprintf(buf, sizeof buf, " %.1f+-%.1f", m[l].get<double>(), d[l].get<double>());
        s << buf;
    }
    s << "\n";
    return s.str();
}

} // namespace widen::harness
