#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "importance.hpp"
#include "trainer.hpp"

namespace widen {

struct RankedFeature {
    std::size_t layer = 0;
    std::size_t feature = 0;
    double score = 0.0;

    bool operator==(const RankedFeature&) const = default;
};

/// Ascending score; ties broken by (layer, feature).
inline bool rank_less(const RankedFeature& a, const RankedFeature& b) {
    return std::tie(a.score, a.layer, a.feature) < std::tie(b.score, b.layer, b.feature);
}

/// Every feature of every expandable layer (the classifier's outputs are never
/// candidates) in one ascending list under `metric`.
template <typename T>
std::vector<RankedFeature> rank_features(const ArchSpec& arch, const ParamStore<T>& store,
                                         const InitSnapshot<T>* snapshot, const Dataset<T>& data, Metric metric,
                                         const BatchNormSettings& bn = {}) {
    std::vector<ImportanceVector> per_layer;
    switch (metric) {
        case Metric::self_resemblance:
            if (!snapshot) throw ConfigError("self_resemblance ranking needs the initialization snapshot");
            per_layer = self_resemblance_all(arch, store, *snapshot);
            break;
        case Metric::l1_norm:
            per_layer = l1_importance_all(arch, store);
            break;
        case Metric::mean_activation:
            per_layer = mean_activation_importance(arch, store, data, 256, bn);
            break;
    }
    std::vector<RankedFeature> out;
    for (const auto& v : per_layer)
        for (std::size_t f = 0; f < v.size(); ++f) out.push_back({v.layer, f, v.scores[f]});
    std::sort(out.begin(), out.end(), rank_less);
    return out;
}

namespace detail {

template <typename T>
Tensor<T> drop_rows(const Tensor<T>& t, std::size_t row) {
    auto shape = t.shape();
    const std::size_t n = t.slice_size();
    shape[0] -= 1;
    std::vector<T> data;
    data.reserve(t.size() - n);
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        if (r == row) continue;
        auto s = t.slice(r);
        data.insert(data.end(), s.begin(), s.end());
    }
    return Tensor<T>(shape, std::move(data));
}

// Remove `count` consecutive entries starting at `begin` from axis 1.
template <typename T>
Tensor<T> drop_cols(const Tensor<T>& t, std::size_t begin, std::size_t count, std::size_t unit) {
    // unit: elements per axis-1 index (product of trailing extents)
    auto shape = t.shape();
    const std::size_t cols = shape[1];
    std::vector<T> data;
    data.reserve(t.size() - shape[0] * count * unit);
    for (std::size_t r = 0; r < shape[0]; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            if (c >= begin && c < begin + count) continue;
            const T* p = t.data() + (r * cols + c) * unit;
            data.insert(data.end(), p, p + unit);
        }
    shape[1] -= count;
    return Tensor<T>(shape, std::move(data));
}

template <typename T>
void prune_store(const ArchSpec& arch, const ArchPlan& p, ParamStore<T>& s, std::size_t layer, std::size_t feature) {
    auto& own = s.layers[layer];
    own.weight = drop_rows(own.weight, feature);
    own.bias = drop_rows(own.bias, feature);
    std::size_t inner = 1; // elements of the flattened vector per channel
    for (std::size_t j = layer + 1; j < arch.layers.size(); ++j) {
        auto& l = s.layers[j];
        switch (arch.layers[j].kind) {
            case LayerKind::batchnorm:
                if (inner != 1) throw ShapeError(arch.layer_label(j) + ": cannot prune through a flattened batch norm");
                l.gamma = drop_rows(l.gamma, feature);
                l.beta = drop_rows(l.beta, feature);
                l.running_mean = drop_rows(l.running_mean, feature);
                l.running_var = drop_rows(l.running_var, feature);
                break;
            case LayerKind::relu:
            case LayerKind::maxpool:
                break;
            case LayerKind::flatten:
                inner = p.layers[j].in[1] * p.layers[j].in[2];
                break;
            case LayerKind::conv:
            case LayerKind::classifier_conv:
                l.weight = drop_cols(l.weight, feature, 1, l.weight.dim(2) * l.weight.dim(3));
                return;
            case LayerKind::linear:
                l.weight = drop_cols(l.weight, feature * inner, inner, 1);
                return;
        }
    }
}

} // namespace detail

/// Remove output feature `feature` of `layer` (and the same index of every coupled
/// layer): its weight/bias/batch-norm slices and the matching input slice of the
/// consuming layer. `extra` stores sharing the layout (e.g. the snapshot) are pruned
/// alongside.
template <typename T>
void prune_feature(ArchSpec& arch, ParamStore<T>& store, std::size_t layer, std::size_t feature,
                   std::vector<ParamStore<T>*> extra = {}) {
    if (layer >= arch.layers.size() || !arch.expandable(layer)) {
        throw ConfigError("prune_feature: layer " + std::to_string(layer) + " is not prunable");
    }
    if (arch.layers[layer].width < 2) {
        throw ConfigError("prune_feature: " + arch.layer_label(layer) + " has a single feature; pruning it disconnects the network");
    }
    if (feature >= arch.layers[layer].width) {
        throw ConfigError("prune_feature: feature " + std::to_string(feature) + " out of range for " + arch.layer_label(layer));
    }
    const auto p = plan(arch); // spatial extents only; unchanged by pruning
    for (auto m : arch.group_of(layer)) {
        detail::prune_store(arch, p, store, m, feature);
        for (auto* s : extra) detail::prune_store(arch, p, *s, m, feature);
        arch.layers[m].width -= 1;
    }
    plan(arch);
}

struct PrunePoint {
    std::size_t features_removed = 0;
    double accuracy = 0.0;
    std::size_t params = 0;
    std::optional<RankedFeature> removed; // empty for the unpruned entry
};

struct PruneCurve {
    Metric metric = Metric::self_resemblance;
    std::vector<PrunePoint> points;
    std::size_t total_features = 0; // prunable features before pruning
};

struct PruneOptions {
    /// Restrict candidates to one layer instead of the global cross-layer ranking.
    std::optional<std::size_t> only_layer;
    std::optional<std::size_t> max_prunes;
    bool recompute_bn = true;
    std::size_t batch_size = 256;
    BatchNormSettings bn{};
};

/// Greedy pruning: repeatedly re-rank, remove the lowest-scoring feature whose layer
/// still has at least two features, and evaluate on `eval_set`. No fine-tuning.
template <typename T>
PruneCurve prune_curve(ArchSpec arch, ParamStore<T> store, std::optional<InitSnapshot<T>> snapshot,
                       const Dataset<T>& rank_set, const Dataset<T>& eval_set, Metric metric,
                       const PruneOptions& opt = {}) {
    if (metric == Metric::self_resemblance && !snapshot) {
        throw ConfigError("prune_curve: self_resemblance needs the initialization snapshot");
    }
    PruneCurve curve;
    curve.metric = metric;
    for (auto i : arch.expandable_layers())
        if (!opt.only_layer || *opt.only_layer == i) curve.total_features += arch.layers[i].width;

    auto measure = [&](std::size_t removed, std::optional<RankedFeature> what) {
        if (opt.recompute_bn) recompute_bn_stats(arch, store, rank_set, opt.batch_size, opt.bn);
        const auto acc = evaluate(arch, store, eval_set, opt.batch_size, opt.bn).accuracy;
        curve.points.push_back({removed, acc, param_count(arch), what});
    };
    measure(0, std::nullopt);

    for (std::size_t k = 1;; ++k) {
        if (opt.max_prunes && k > *opt.max_prunes) break;
        const auto ranking = rank_features(arch, store, snapshot ? &*snapshot : nullptr, rank_set, metric, opt.bn);
        std::optional<RankedFeature> pick;
        for (const auto& rf : ranking) {
            if (opt.only_layer && rf.layer != *opt.only_layer) continue;
            if (arch.layers[rf.layer].width < 2) continue;
            pick = rf;
            break;
        }
        if (!pick) break;
        std::vector<ParamStore<T>*> extra;
        if (snapshot) extra.push_back(&snapshot->store);
        prune_feature(arch, store, pick->layer, pick->feature, extra);
        measure(k, pick);
    }
    return curve;
}

/// Longest prefix of removals whose accuracy stays within `tolerance` of the unpruned model.
inline std::size_t prunable_prefix(const PruneCurve& c, double tolerance) {
    if (c.points.empty()) return 0;
    const double base = c.points.front().accuracy;
    std::size_t n = 0;
    for (std::size_t k = 1; k < c.points.size(); ++k) {
        if (base - c.points[k].accuracy >= tolerance) break;
        n = c.points[k].features_removed;
    }
    return n;
}

inline nlohmann::json to_json(const PruneCurve& c) {
    auto pts = nlohmann::json::array();
    for (const auto& p : c.points) {
        nlohmann::json j{{"features_removed", p.features_removed}, {"accuracy", p.accuracy}, {"params", p.params}};
        if (p.removed) j["removed"] = {{"layer", p.removed->layer}, {"feature", p.removed->feature}, {"score", p.removed->score}};
        pts.push_back(j);
    }
    return {{"metric", to_string(c.metric)}, {"total_features", c.total_features}, {"points", pts}};
}

inline std::string to_csv(const PruneCurve& c) {
    std::string s = "features_removed,accuracy,params\n";
    char buf[96];
    for (const auto& p : c.points) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%zu\n", p.features_removed, p.accuracy, p.params);
        s += buf;
    }
    return s;
}

} // namespace widen
