#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "arch.hpp"
#include "tensor.hpp"

namespace widen {

/// Parameters of one layer. Tensors a layer does not use stay empty.
template <typename T = double>
struct LayerParams {
    Tensor<T> weight; // conv [F,C,kh,kw], linear [F,Cin], classifier-conv [F,C,H,W]
    Tensor<T> bias;   // [F]
    Tensor<T> gamma, beta;                 // batchnorm [C]
    Tensor<T> running_mean, running_var;   // batchnorm [C], not learnable

    bool operator==(const LayerParams&) const = default;
};

enum class ParamRole { weight, bias, bn_scale, bn_shift };

template <typename T = double>
struct ParamStore {
    std::vector<LayerParams<T>> layers;

    bool operator==(const ParamStore&) const = default;

    /// Visit every learnable tensor in a fixed order.
    template <typename F>
    void for_each(F&& fn) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& l = layers[i];
            if (!l.weight.empty()) fn(i, ParamRole::weight, l.weight);
            if (!l.bias.empty()) fn(i, ParamRole::bias, l.bias);
            if (!l.gamma.empty()) fn(i, ParamRole::bn_scale, l.gamma);
            if (!l.beta.empty()) fn(i, ParamRole::bn_shift, l.beta);
        }
    }
    template <typename F>
    void for_each(F&& fn) const {
        const_cast<ParamStore*>(this)->for_each([&](std::size_t i, ParamRole r, Tensor<T>& t) {
            fn(i, r, static_cast<const Tensor<T>&>(t));
        });
    }

    std::size_t learnable_count() const {
        std::size_t n = 0;
        for_each([&](std::size_t, ParamRole, const Tensor<T>& t) { n += t.size(); });
        return n;
    }
};

/// Gradients share the store layout; running statistics stay empty.
template <typename T = double>
using Gradients = ParamStore<T>;

/// Zero-filled store with every shape derived from the architecture.
template <typename T = double>
ParamStore<T> make_store(const ArchSpec& arch) {
    const auto p = plan(arch);
    ParamStore<T> s;
    s.layers.resize(arch.layers.size());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& lp = p.layers[i];
        auto& l = s.layers[i];
        if (arch.layers[i].learnable()) {
            l.weight = Tensor<T>(lp.weight);
            l.bias = Tensor<T>({lp.weight[0]});
        } else if (arch.layers[i].kind == LayerKind::batchnorm) {
            const Shape c{lp.in[0]};
            l.gamma = Tensor<T>(c, T{1});
            l.beta = Tensor<T>(c);
            l.running_mean = Tensor<T>(c);
            l.running_var = Tensor<T>(c, T{1});
        }
    }
    return s;
}

/// Zero tensors shaped like the learnable parameters of `store`.
template <typename T>
Gradients<T> zeros_like(const ParamStore<T>& store) {
    Gradients<T> g;
    g.layers.resize(store.layers.size());
    for (std::size_t i = 0; i < store.layers.size(); ++i) {
        const auto& l = store.layers[i];
        auto& o = g.layers[i];
        if (!l.weight.empty()) o.weight = Tensor<T>(l.weight.shape());
        if (!l.bias.empty()) o.bias = Tensor<T>(l.bias.shape());
        if (!l.gamma.empty()) o.gamma = Tensor<T>(l.gamma.shape());
        if (!l.beta.empty()) o.beta = Tensor<T>(l.beta.shape());
    }
    return g;
}

/// He-normal initialization: weights ~ N(0, 2 / fan_in), zero biases, identity batch norm.
/// Draws happen in layer order so a seed fully determines the store.
template <typename T = double>
ParamStore<T> he_init(const ArchSpec& arch, Rng& rng) {
    const auto p = plan(arch);
    auto s = make_store<T>(arch);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        auto& l = s.layers[i];
        if (l.weight.empty()) continue;
        const double stddev = std::sqrt(2.0 / static_cast<double>(p.layers[i].fan_in));
        for (auto& v : l.weight.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    }
    return s;
}

// Store file layout: "WPAR" | u32 layer count | per layer: u8 flags (1 weight+bias, 2 batchnorm)
// followed by the present tensors in the order weight, bias, gamma, beta, running_mean, running_var.

template <typename T>
void write_store(std::ostream& os, const ParamStore<T>& s) {
    os.write("WPAR", 4);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.layers.size()));
    for (const auto& l : s.layers) {
        std::uint8_t flags = (l.weight.empty() ? 0 : 1) | (l.gamma.empty() ? 0 : 2);
        detail::write_le<std::uint8_t>(os, flags);
        if (flags & 1) {
            write_tensor(os, l.weight);
            write_tensor(os, l.bias);
        }
        if (flags & 2) {
            write_tensor(os, l.gamma);
            write_tensor(os, l.beta);
            write_tensor(os, l.running_mean);
            write_tensor(os, l.running_var);
        }
    }
}

template <typename T>
ParamStore<T> read_store(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "WPAR") throw ParseError("not a parameter store (bad magic)");
    ParamStore<T> s;
    s.layers.resize(detail::read_le<std::uint32_t>(is));
    for (auto& l : s.layers) {
        const auto flags = detail::read_le<std::uint8_t>(is);
        if (flags & 1) {
            l.weight = read_tensor<T>(is);
            l.bias = read_tensor<T>(is);
        }
        if (flags & 2) {
            l.gamma = read_tensor<T>(is);
            l.beta = read_tensor<T>(is);
            l.running_mean = read_tensor<T>(is);
            l.running_var = read_tensor<T>(is);
        }
    }
    return s;
}

template <typename T>
void save_store(const std::string& path, const ParamStore<T>& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path + "'");
    write_store(os, s);
}

template <typename T>
ParamStore<T> load_store(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open '" + path + "'");
    return read_store<T>(is);
}

/// Throws if the store's shapes are not the ones the architecture implies.
template <typename T>
void check_store(const ArchSpec& arch, const ParamStore<T>& s) {
    const auto expected = make_store<T>(arch);
    if (expected.layers.size() != s.layers.size()) {
        throw ShapeError("parameter store has " + std::to_string(s.layers.size()) + " layers, architecture has " +
                         std::to_string(expected.layers.size()));
    }
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
        const auto& a = expected.layers[i];
        const auto& b = s.layers[i];
        if (a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape() ||
            a.gamma.shape() != b.gamma.shape() || a.running_mean.shape() != b.running_mean.shape()) {
            throw ShapeError(arch.layer_label(i) + ": stored parameters " + shape_str(b.weight.shape()) +
                             " do not match architecture " + shape_str(a.weight.shape()));
        }
    }
}

} // namespace widen
