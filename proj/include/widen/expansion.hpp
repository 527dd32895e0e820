#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "importance.hpp"
#include "trainer.hpp"

namespace widen {

/// Which inequality triggers widening.
///   prose:   every non-degenerate feature has c > epsilon            (min c > epsilon)
///   printed: max c < 1 - epsilon, the inequality as typeset in the algorithm listing
enum class Condition { prose, printed };

inline Condition condition_from_string(const std::string& s) {
    if (s == "prose") return Condition::prose;
    if (s == "printed") return Condition::printed;
    throw ConfigError("unknown condition '" + s + "' (expected prose or printed)");
}

inline const char* to_string(Condition c) { return c == Condition::prose ? "prose" : "printed"; }

struct ExpansionConfig {
    double epsilon = 1e-6; // +inf disables expansion
    std::size_t f_exp = 1;
    double stability_fraction = 0.5;
    std::optional<std::size_t> max_width;
    Condition condition = Condition::prose;
    std::size_t eval_every = 1;

    bool enabled() const { return std::isfinite(epsilon); }

    void validate() const {
        if (enabled() && !(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("expansion.epsilon: must be in (0, 1)");
        if (f_exp < 1) throw ConfigError("expansion.f_exp: must be >= 1");
        if (!(stability_fraction > 0.0 && stability_fraction <= 1.0))
            throw ConfigError("expansion.stability_fraction: must be in (0, 1]");
        if (eval_every < 1) throw ConfigError("expansion.eval_every: must be >= 1");
        if (max_width && *max_width < 1) throw ConfigError("expansion.max_width: must be >= 1");
    }

    static ExpansionConfig disabled() {
        ExpansionConfig c;
        c.epsilon = std::numeric_limits<double>::infinity();
        return c;
    }
};

inline ExpansionConfig expansion_config_from_json(const nlohmann::json& j, ExpansionConfig c = {}) {
    try {
        if (j.contains("epsilon")) {
            const auto& e = j.at("epsilon");
            c.epsilon = e.is_string() && e.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                      : e.get<double>();
        }
        c.f_exp = j.value("f_exp", c.f_exp);
        c.stability_fraction = j.value("stability_fraction", c.stability_fraction);
        if (j.contains("max_width") && !j.at("max_width").is_null()) c.max_width = j.at("max_width").get<std::size_t>();
        if (j.contains("condition")) c.condition = condition_from_string(j.at("condition").get<std::string>());
        c.eval_every = j.value("eval_every", c.eval_every);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("expansion: ") + e.what());
    }
    c.validate();
    return c;
}

/// Expansion test for one layer; degenerate features are ignored and a layer without
/// any scorable feature never expands.
inline bool should_expand(const ImportanceVector& scores, double epsilon, Condition cond = Condition::prose) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool any = false;
    for (std::size_t f = 0; f < scores.size(); ++f) {
        if (!scores.degenerate.empty() && scores.degenerate[f]) continue;
        any = true;
        lo = std::min(lo, scores.scores[f]);
        hi = std::max(hi, scores.scores[f]);
    }
    if (!any) return false;
    return cond == Condition::prose ? lo > epsilon : hi < 1.0 - epsilon;
}

struct ExpansionEvent {
    std::size_t step = 0;  // optimizer steps since the run started
    std::size_t epoch = 0; // epochs (complete or interrupted) since the run started
    std::vector<std::size_t> layers;
    std::size_t old_width = 0;
    std::size_t new_width = 0;
    double min_score = 0.0;
    bool suppressed = false; // width cap reached, architecture unchanged
};

inline nlohmann::json to_json(const ExpansionEvent& e) {
    return {{"type", e.suppressed ? "suppressed" : "expansion"},
            {"step", e.step},
            {"epoch", e.epoch},
            {"layers", e.layers},
            {"old_width", e.old_width},
            {"new_width", e.new_width},
            {"min_score", e.min_score}};
}

struct ExpandOutcome {
    ArchSpec arch;
    bool expanded = false;
    bool suppressed = false;
};

/// Widen `layer` and every layer coupled to it by `f_exp` features. Downstream input
/// sizes follow from the shape pass. A cap that would be exceeded leaves the
/// architecture unchanged.
inline ExpandOutcome expand_layer(const ArchSpec& arch, std::size_t layer, std::size_t f_exp,
                                  std::optional<std::size_t> max_width = std::nullopt) {
    if (layer >= arch.layers.size() || !arch.expandable(layer)) {
        throw ConfigError(arch.layer_label(std::min(layer, arch.layers.size() - 1)) + " is not expandable");
    }
    ExpandOutcome out{arch};
    const std::size_t w = arch.layers[layer].width;
    if (max_width && w + f_exp > *max_width) {
        out.suppressed = true;
        return out;
    }
    for (auto m : arch.group_of(layer)) out.arch.layers[m].width = w + f_exp;
    plan(out.arch);
    out.expanded = true;
    return out;
}

struct EpochSummary {
    std::size_t epoch = 0;  // run-global epoch counter
    std::size_t t = 0;      // epochs since the last re-initialization, after this one
    std::vector<std::size_t> widths;
    std::size_t params = 0;
    double train_loss = 0.0;
    std::size_t stable_epochs = 0;
    bool reset = false; // epoch cut short by an expansion
    std::optional<double> accuracy;
};

inline nlohmann::json to_json(const EpochSummary& s) {
    nlohmann::json j{{"type", "epoch"},       {"epoch", s.epoch},   {"t", s.t},
            {"widths", s.widths},    {"params", s.params}, {"train_loss", s.train_loss},
            {"stable_epochs", s.stable_epochs}, {"reset", s.reset}};
    if (s.accuracy) j["accuracy"] = *s.accuracy;
    return j;
}

struct ExpansionState {
    std::size_t t = 0;
    std::size_t stable_epochs = 0;
    std::size_t reset_count = 0;
    std::size_t steps = 0;
    std::size_t epochs_run = 0;
    std::vector<std::vector<std::size_t>> width_history; // widths after start and after every expansion
    bool frozen = false;     // stability reached, no further expansion checks
    bool terminated = false;
};

template <typename T>
struct ExpansionResult {
    ArchSpec arch;
    ParamStore<T> store;
    InitSnapshot<T> snapshot;
    ExpansionState state;
    std::vector<ExpansionEvent> events;
    std::vector<EpochSummary> epochs;
};

/// Optional observer hooks, e.g. for streaming the event log to disk. `on_epoch` may
/// fill in fields of the summary (such as a held-out accuracy) before it is stored.
template <typename T = double>
struct ExpansionObserver {
    std::function<void(const ExpansionEvent&)> on_event;
    std::function<void(EpochSummary&, const ArchSpec&, const ParamStore<T>&)> on_epoch;
};

/// Greedy width expansion.
///
/// Every expandable layer starts at width 1. After each optimizer step the
/// self-resemblance of every layer is measured against its state at the last
/// (re-)initialization; layers whose condition fires are widened by f_exp (with
/// their coupling group), all parameters are drawn afresh, the epoch counter and
/// learning rate restart, and the snapshot is refreshed. Once no expansion has
/// happened for stability_fraction * epochs consecutive epochs the architecture
/// is frozen and training continues until `epochs` epochs have elapsed since the
/// last re-initialization, so the returned store is the converged architecture
/// trained from scratch on the full schedule.
template <typename T>
ExpansionResult<T> run_expansion(const ArchSpec& arch0, const TrainConfig& train_cfg, const ExpansionConfig& exp_cfg,
                                 const Dataset<T>& data, Rng& rng, const ExpansionObserver<T>& observer = {}) {
    train_cfg.validate();
    exp_cfg.validate();
    if (train_cfg.epochs < 1) throw ConfigError("train.epochs: expansion needs at least one epoch");
    if (exp_cfg.enabled()) {
        for (auto i : arch0.expandable_layers())
            if (arch0.layers[i].width != 1)
                throw ConfigError(arch0.layer_label(i) + ": expansion must start from width 1, got " +
                                  std::to_string(arch0.layers[i].width));
    }
    plan(arch0);

    ExpansionResult<T> r;
    r.arch = arch0;
    auto& st = r.state;
    st.width_history.push_back(r.arch.widths());
    st.frozen = !exp_cfg.enabled();
    const auto stable_needed = static_cast<std::size_t>(
        std::ceil(exp_cfg.stability_fraction * static_cast<double>(train_cfg.epochs) - 1e-12));

    r.store = he_init<T>(r.arch, rng);
    r.snapshot = snapshot_refresh(r.store);
    auto velocity = zeros_like(r.store);
    std::size_t steps_since_reset = 0;
    std::set<std::pair<std::size_t, std::size_t>> suppressed_seen; // (layer, width)

    auto emit = [&](const ExpansionEvent& e) {
        r.events.push_back(e);
        if (observer.on_event) observer.on_event(e);
    };

    while (st.t < train_cfg.epochs) {
        bool reset = false;
        auto hook = [&]() -> bool {
            ++st.steps;
            ++steps_since_reset;
            if (st.frozen || steps_since_reset % exp_cfg.eval_every != 0) return false;

            std::vector<std::size_t> fired;
            std::vector<double> fired_min;
            std::set<std::size_t> covered;
            for (auto i : r.arch.expandable_layers()) {
                auto v = self_resemblance(r.snapshot.store.layers[i].weight, r.store.layers[i].weight);
                if (!should_expand(v, exp_cfg.epsilon, exp_cfg.condition)) continue;
                if (covered.count(i)) continue;
                for (auto m : r.arch.group_of(i)) covered.insert(m);
                double lo = std::numeric_limits<double>::infinity();
                for (std::size_t f = 0; f < v.size(); ++f)
                    if (!v.degenerate[f]) lo = std::min(lo, v.scores[f]);
                fired.push_back(i);
                fired_min.push_back(lo);
            }
            ArchSpec next = r.arch;
            for (std::size_t k = 0; k < fired.size(); ++k) {
                const std::size_t i = fired[k];
                ExpansionEvent e;
                e.step = st.steps;
                e.epoch = st.epochs_run;
                e.layers = next.group_of(i);
                e.old_width = next.layers[i].width;
                e.min_score = fired_min[k];
                auto out = expand_layer(next, i, exp_cfg.f_exp, exp_cfg.max_width);
                if (out.suppressed) {
                    if (!suppressed_seen.emplace(i, e.old_width).second) continue;
                    e.new_width = e.old_width;
                    e.suppressed = true;
                    emit(e);
                    continue;
                }
                next = std::move(out.arch);
                e.new_width = next.layers[i].width;
                emit(e);
                reset = true;
            }
            if (reset) r.arch = std::move(next);
            return reset;
        };

        const auto er = train_epoch(r.arch, r.store, velocity, train_cfg, data, rng, st.t, hook);
        ++st.epochs_run;
        EpochSummary s;
        s.epoch = st.epochs_run - 1;
        s.train_loss = er.mean_loss;
        if (reset) {
            r.store = he_init<T>(r.arch, rng);
            r.snapshot = snapshot_refresh(r.store);
            velocity = zeros_like(r.store);
            steps_since_reset = 0;
            st.t = 0;
            st.stable_epochs = 0;
            ++st.reset_count;
            st.width_history.push_back(r.arch.widths());
            s.reset = true;
        } else {
            ++st.t;
            ++st.stable_epochs;
            if (!st.frozen && st.stable_epochs >= stable_needed) st.frozen = true;
        }
        s.t = st.t;
        s.widths = r.arch.widths();
        s.params = param_count(r.arch);
        s.stable_epochs = st.stable_epochs;
        if (observer.on_epoch) observer.on_epoch(s, r.arch, r.store);
        r.epochs.push_back(s);
    }
    st.terminated = true;
    return r;
}

} // namespace widen
