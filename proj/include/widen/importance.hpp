#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "network.hpp"
#include "params.hpp"

namespace widen {

enum class Metric { self_resemblance, l1_norm, mean_activation };

inline const char* to_string(Metric m) {
    switch (m) {
        case Metric::self_resemblance: return "self_resemblance";
        case Metric::l1_norm: return "l1_norm";
        case Metric::mean_activation: return "mean_activation";
    }
    return "?";
}

inline Metric metric_from_string(const std::string& s) {
    if (s == "self_resemblance" || s == "ncc") return Metric::self_resemblance;
    if (s == "l1_norm" || s == "l1") return Metric::l1_norm;
    if (s == "mean_activation" || s == "activation") return Metric::mean_activation;
    throw ConfigError("unknown metric '" + s + "' (expected self_resemblance, l1_norm or mean_activation)");
}

/// Per-output-feature scores of one layer.
struct ImportanceVector {
    std::size_t layer = 0;
    Metric metric = Metric::self_resemblance;
    std::vector<double> scores;
    std::vector<bool> degenerate; // zero-variance slices; their score is 0
    std::size_t step = 0;

    std::size_t size() const { return scores.size(); }
};

inline nlohmann::json to_json(const ImportanceVector& v) {
    return {{"layer", v.layer}, {"metric", to_string(v.metric)}, {"scores", v.scores}, {"step", v.step}};
}

/// Weights of every layer as they were right after (re-)initialization.
template <typename T = double>
struct InitSnapshot {
    ParamStore<T> store;
};

template <typename T>
InitSnapshot<T> snapshot_refresh(const ParamStore<T>& store) {
    return InitSnapshot<T>{store};
}

/// One minus the Pearson correlation between each feature's current weight slice and
/// its slice at initialization, both centred and normalized over all non-output axes.
/// 0 means unchanged up to an affine rescaling; 2 means perfectly anti-correlated.
///
/// Slices with (numerically) zero variance in either tensor carry no structure; they
/// score 0 and are flagged degenerate.
template <typename T>
ImportanceVector self_resemblance(const Tensor<T>& w_init, const Tensor<T>& w_now) {
    w_init.require_same_shape(w_now, "self_resemblance");
    ImportanceVector out;
    out.metric = Metric::self_resemblance;
    const std::size_t F = w_now.dim(0), n = w_now.slice_size();
    out.scores.assign(F, 0.0);
    out.degenerate.assign(F, false);
    for (std::size_t f = 0; f < F; ++f) {
        const auto a = w_init.slice(f);
        const auto b = w_now.slice(f);
        double ma = 0.0, mb = 0.0, ra = 0.0, rb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            ma += a[k];
            mb += b[k];
            ra += static_cast<double>(a[k]) * a[k];
            rb += static_cast<double>(b[k]) * b[k];
        }
        ma /= static_cast<double>(n);
        mb /= static_cast<double>(n);
        double cross = 0.0, va = 0.0, vb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double da = a[k] - ma, db = b[k] - mb;
            cross += da * db;
            va += da * da;
            vb += db * db;
        }
        constexpr double rel = 1e-24; // squared relative size of centring residue
        if (n < 2 || !(va > rel * ra) || !(vb > rel * rb)) {
            out.degenerate[f] = true;
            continue;
        }
        const double rho = cross / (std::sqrt(va) * std::sqrt(vb));
        out.scores[f] = std::clamp(1.0 - rho, 0.0, 2.0);
    }
    return out;
}

/// Per-feature sum of absolute weights.
template <typename T>
ImportanceVector l1_importance(const Tensor<T>& w) {
    ImportanceVector out;
    out.metric = Metric::l1_norm;
    out.scores.assign(w.dim(0), 0.0);
    out.degenerate.assign(w.dim(0), false);
    for (std::size_t f = 0; f < w.dim(0); ++f) {
        double s = 0.0;
        for (T v : w.slice(f)) s += std::abs(static_cast<double>(v));
        out.scores[f] = s;
    }
    return out;
}

/// Index of the layer whose output counts as the post-activation of learnable layer i:
/// the first relu after it (before the next learnable layer), else layer i itself.
inline std::size_t activation_site(const ArchSpec& arch, std::size_t i) {
    for (std::size_t j = i + 1; j < arch.layers.size() && !arch.layers[j].learnable(); ++j)
        if (arch.layers[j].kind == LayerKind::relu) return j;
    return i;
}

/// Mean post-activation per feature over every sample and position of `data`,
/// for each expandable layer (eval mode, one full pass).
template <typename T>
std::vector<ImportanceVector> mean_activation_importance(const ArchSpec& arch, const ParamStore<T>& store,
                                                         const Dataset<T>& data, std::size_t batch_size = 256,
                                                         const BatchNormSettings& bn = {}) {
    if (data.size() == 0) throw ConfigError("mean_activation_importance: empty dataset");
    const auto layers = arch.expandable_layers();
    std::vector<ImportanceVector> out;
    std::vector<std::size_t> sites;
    for (auto i : layers) {
        ImportanceVector v;
        v.layer = i;
        v.metric = Metric::mean_activation;
        v.scores.assign(arch.layers[i].width, 0.0);
        v.degenerate.assign(arch.layers[i].width, false);
        out.push_back(std::move(v));
        sites.push_back(activation_site(arch, i));
    }
    std::vector<std::size_t> counts(layers.size(), 0);
    auto& copy = const_cast<ParamStore<T>&>(store); // eval mode only reads
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, data.size() - start);
        idx.resize(n);
        for (std::size_t k = 0; k < n; ++k) idx[k] = start + k;
        auto batch = gather(data, idx);
        auto fr = forward(arch, copy, batch.images, Mode::eval, bn, true);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const std::size_t site = sites[li];
            const Tensor<T>& act = site + 1 < arch.layers.size() ? fr.cache.layers[site + 1].input : fr.logits;
            const std::size_t F = act.dim(1), inner = act.size() / (n * F);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t f = 0; f < F; ++f) {
                    const T* p = act.data() + (s * F + f) * inner;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < inner; ++k) acc += p[k];
                    out[li].scores[f] += acc;
                }
            counts[li] += n * inner;
        }
    }
    for (std::size_t li = 0; li < layers.size(); ++li)
        for (auto& s : out[li].scores) s /= static_cast<double>(counts[li]);
    return out;
}

/// Self-resemblance of every expandable layer against the snapshot.
template <typename T>
std::vector<ImportanceVector> self_resemblance_all(const ArchSpec& arch, const ParamStore<T>& store,
                                                   const InitSnapshot<T>& snapshot) {
    std::vector<ImportanceVector> out;
    for (auto i : arch.expandable_layers()) {
        auto v = self_resemblance(snapshot.store.layers.at(i).weight, store.layers[i].weight);
        v.layer = i;
        out.push_back(std::move(v));
    }
    return out;
}

template <typename T>
std::vector<ImportanceVector> l1_importance_all(const ArchSpec& arch, const ParamStore<T>& store) {
    std::vector<ImportanceVector> out;
    for (auto i : arch.expandable_layers()) {
        auto v = l1_importance(store.layers[i].weight);
        v.layer = i;
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace widen
