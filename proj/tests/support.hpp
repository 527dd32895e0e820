#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <widen/widen.hpp>

namespace testing_support {

using namespace widen;

struct GradSample {
    std::size_t layer = 0;
    ParamRole role = ParamRole::weight;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

/// Central differences of the mean cross-entropy in train mode against backward().
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline std::vector<GradSample> gradient_check(const ArchSpec& arch, const ParamStore<double>& store,
                                              const Tensor<double>& x, const std::vector<int>& labels,
                                              std::size_t samples, Rng& rng, double h = 1e-5, double floor = 1e-6) {
    auto loss_of = [&](ParamStore<double> s) {
        auto fr = forward(arch, s, x, Mode::train, {}, false);
        return cross_entropy(fr.logits, std::span<const int>(labels)).loss;
    };
    auto work = store;
    auto fr = forward(arch, work, x, Mode::train);
    auto ce = cross_entropy(fr.logits, std::span<const int>(labels));
    const auto grads = backward(arch, store, fr.cache, ce.grad);

    struct Ref {
        std::size_t layer;
        ParamRole role;
        std::size_t size;
    };
    std::vector<Ref> refs;
    std::size_t total = 0;
    store.for_each([&](std::size_t i, ParamRole r, const Tensor<double>& t) {
        refs.push_back({i, r, t.size()});
        total += t.size();
    });
    auto pick = [](ParamStore<double>& s, std::size_t i, ParamRole r) -> Tensor<double>& {
        auto& l = s.layers[i];
        switch (r) {
            case ParamRole::weight: return l.weight;
            case ParamRole::bias: return l.bias;
            case ParamRole::bn_scale: return l.gamma;
            case ParamRole::bn_shift: return l.beta;
        }
        return l.weight;
    };

    std::vector<GradSample> out;
    auto g = grads;
    for (std::size_t k = 0; k < samples; ++k) {
        std::size_t flat = static_cast<std::size_t>(rng.below(total));
        std::size_t r = 0;
        while (flat >= refs[r].size) flat -= refs[r++].size;
        GradSample s;
        s.layer = refs[r].layer;
        s.role = refs[r].role;
        s.index = flat;
        s.analytic = pick(g, s.layer, s.role)[flat];
        auto plus = store, minus = store;
        pick(plus, s.layer, s.role)[flat] += h;
        pick(minus, s.layer, s.role)[flat] -= h;
        s.numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
        s.rel_error = std::abs(s.analytic - s.numeric) / std::max({std::abs(s.analytic), std::abs(s.numeric), floor});
        out.push_back(s);
    }
    return out;
}

/// Random 3-learnable-layer network touching every layer kind.
inline ArchSpec mixed_net(bool classifier_conv) {
    nlohmann::json layers = nlohmann::json::array({
        {{"kind", "conv"}, {"width", 3}, {"kernel", 3}, {"padding", 1}},
        {{"kind", "batchnorm"}},
        {{"kind", "relu"}},
        {{"kind", "maxpool"}, {"kernel", 2}},
        {{"kind", "conv"}, {"width", 4}, {"kernel", 2}, {"stride", 2}},
        {{"kind", "batchnorm"}},
        {{"kind", "relu"}},
    });
    if (classifier_conv) {
        layers.push_back({{"kind", "classifier-conv"}});
    } else {
        layers.push_back({{"kind", "flatten"}});
        layers.push_back({{"kind", "linear"}});
    }
    return arch_from_json({{"name", "mixed"}, {"input_shape", {2, 8, 8}}, {"num_classes", 3}, {"layers", layers}});
}

/// Store with gamma/beta moved off their identity values so their gradients are exercised.
inline ParamStore<double> random_store(const ArchSpec& arch, Rng& rng) {
    auto s = he_init<double>(arch, rng);
    s.for_each([&](std::size_t, ParamRole r, const Tensor<double>& t) {
        auto& m = const_cast<Tensor<double>&>(t);
        if (r == ParamRole::bias || r == ParamRole::bn_shift)
            for (auto& v : m.values()) v = rng.normal(0.0, 0.3);
        if (r == ParamRole::bn_scale)
            for (auto& v : m.values()) v = rng.uniform(0.5, 1.5);
    });
    return s;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

// Copy of `src` without row `f` along axis 0 (for [F,...]) or channel `f` along axis 1.
inline Tensor<double> without_axis0(const Tensor<double>& src, std::size_t f) {
    auto shape = src.shape();
    const std::size_t inner = src.size() / shape[0];
    shape[0] -= 1;
    Tensor<double> out(shape);
    std::size_t o = 0;
    for (std::size_t r = 0; r < src.dim(0); ++r) {
        if (r == f) continue;
        for (std::size_t k = 0; k < inner; ++k) out[o++] = src[r * inner + k];
    }
    return out;
}

// Drop the input block [f*unit, (f+1)*unit) from every row of a [F, ...] weight.
// A conv weight loses one channel of kh*kw elements, a linear weight `unit` columns.
inline Tensor<double> without_input(const Tensor<double>& src, std::size_t f, std::size_t unit) {
    auto shape = src.shape();
    const std::size_t row = src.size() / shape[0];
    Shape out_shape = shape;
    out_shape[1] -= shape.size() == 2 ? unit : 1;
    Tensor<double> out(out_shape);
    std::size_t o = 0;
    for (std::size_t r = 0; r < shape[0]; ++r)
        for (std::size_t k = 0; k < row; ++k) {
            if (k >= f * unit && k < (f + 1) * unit) continue;
            out[o++] = src[r * row + k];
        }
    return out;
}

/// Logits of `arch` with `feature` of `layer` pruned, against a smaller network assembled
/// by hand from the same parameters. Layer must be 0 or 4 of mixed_net(false).
inline double mixed_net_prune_gap(std::size_t layer, std::size_t feature, std::size_t inputs, Rng& rng) {
    const auto a = mixed_net(false);
    auto s = random_store(a, rng);
    // distinct running statistics so their slicing matters
    const auto warm = Tensor<double>::normal({8, 2, 8, 8}, rng, 0.3, 1.5);
    forward(a, s, warm, Mode::train);

    ArchSpec small = a;
    small.layers[layer].width -= 1;
    auto ref = make_store<double>(small);
    for (std::size_t i = 0; i < a.layers.size(); ++i) ref.layers[i] = s.layers[i];
    ref.layers[layer].weight = without_axis0(s.layers[layer].weight, feature);
    ref.layers[layer].bias = without_axis0(s.layers[layer].bias, feature);
    auto& bn = ref.layers[layer + 1];
    const auto& src = s.layers[layer + 1];
    bn.gamma = without_axis0(src.gamma, feature);
    bn.beta = without_axis0(src.beta, feature);
    bn.running_mean = without_axis0(src.running_mean, feature);
    bn.running_var = without_axis0(src.running_var, feature);
    if (layer == 0) ref.layers[4].weight = without_input(s.layers[4].weight, feature, 2 * 2); // 2x2 kernel
    else ref.layers[8].weight = without_input(s.layers[8].weight, feature, 4); // 2x2 positions per channel
    check_store(small, ref);

    auto pa = a;
    auto ps = s;
    prune_feature(pa, ps, layer, feature);
    if (!(pa == small)) return std::numeric_limits<double>::infinity();
    const auto x = Tensor<double>::normal({inputs, 2, 8, 8}, rng);
    const auto got = predict(pa, ps, x), want = predict(small, ref, x);
    double gap = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k) gap = std::max(gap, std::abs(got[k] - want[k]));
    return gap;
}


} // namespace testing_support
