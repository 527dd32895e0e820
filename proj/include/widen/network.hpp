#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "arch.hpp"
#include "ops.hpp"
#include "params.hpp"

namespace widen {

enum class Mode { train, eval };

struct BatchNormSettings {
    double epsilon = 1e-3;
    double momentum = 0.1; // weight of the new batch in the running averages
};

template <typename T>
struct LayerCache {
    Tensor<T> input;
    Tensor<T> xhat;               // batchnorm
    std::vector<T> inv_std;       // batchnorm
    std::vector<std::size_t> argmax; // maxpool
};

/// Activations retained by a forward pass for the matching backward pass.
template <typename T>
struct ForwardCache {
    Mode mode = Mode::eval;
    std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    ForwardCache<T> cache;
};

namespace detail {

// Batch norm over axis 1 of [N,C] or [N,C,H,W].
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, LayerParams<T>& p, Mode mode, const BatchNormSettings& bn,
                            LayerCache<T>* cache) {
    const std::size_t N = x.dim(0), C = x.dim(1), inner = x.size() / (N * C);
    const std::size_t M = N * inner;
    Tensor<T> y(x.shape());
    std::vector<T> mean(C), inv_std(C);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* px = x.data() + (n * C + c) * inner;
                for (std::size_t k = 0; k < inner; ++k) s += px[k];
            }
            const double mu = s / static_cast<double>(M);
            double v = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* px = x.data() + (n * C + c) * inner;
                for (std::size_t k = 0; k < inner; ++k) v += (px[k] - mu) * (px[k] - mu);
            }
            const double var = v / static_cast<double>(M);
            mean[c] = static_cast<T>(mu);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + bn.epsilon));
            const double unbiased = M > 1 ? v / static_cast<double>(M - 1) : var;
            p.running_mean[c] = static_cast<T>((1.0 - bn.momentum) * p.running_mean[c] + bn.momentum * mu);
            p.running_var[c] = static_cast<T>((1.0 - bn.momentum) * p.running_var[c] + bn.momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = p.running_mean[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.running_var[c]) + bn.epsilon));
        }
    }
    Tensor<T> xhat(x.shape());
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                const T h = (x[off + k] - mean[c]) * inv_std[c];
                xhat[off + k] = h;
                y[off + k] = p.gamma[c] * h + p.beta[c];
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& gy, const LayerParams<T>& p, const LayerCache<T>& cache, Mode mode,
                             LayerParams<T>& grads) {
    const std::size_t N = gy.dim(0), C = gy.dim(1), inner = gy.size() / (N * C);
    const double M = static_cast<double>(N * inner);
    Tensor<T> gx(gy.shape());
    for (std::size_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                sum_g += gy[off + k];
                sum_gx += gy[off + k] * cache.xhat[off + k];
            }
        }
        grads.gamma[c] += static_cast<T>(sum_gx);
        grads.beta[c] += static_cast<T>(sum_g);
        const double scale = static_cast<double>(p.gamma[c]) * cache.inv_std[c];
        for (std::size_t n = 0; n < N; ++n) {
            const std::size_t off = (n * C + c) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                if (mode == Mode::train) {
                    gx[off + k] = static_cast<T>(scale * (gy[off + k] - sum_g / M - cache.xhat[off + k] * sum_gx / M));
                } else {
                    gx[off + k] = static_cast<T>(scale * gy[off + k]);
                }
            }
        }
    }
    return gx;
}

// y[N,F] = x[N,K] W[F,K]^T + b
template <typename T>
Tensor<T> affine_forward(const Tensor<T>& x2d, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t N = x2d.dim(0), K = x2d.dim(1), F = w.dim(0);
    Tensor<T> y({N, F});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f) y[n * F + f] = b[f];
    kernel::gemm_nt(N, F, K, x2d.data(), w.data(), y.data());
    return y;
}

} // namespace detail

/// Run the network on a batch [N, C, H, W]. Train mode uses batch statistics in batch
/// norm and updates the running averages in `store`.
template <typename T>
ForwardResult<T> forward(const ArchSpec& arch, ParamStore<T>& store, const Tensor<T>& batch, Mode mode,
                         const BatchNormSettings& bn = {}, bool keep_cache = true) {
    if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != arch.input_shape) {
        throw ShapeError("batch " + shape_str(batch.shape()) + " does not match input shape " +
                         shape_str(arch.input_shape));
    }
    if (store.layers.size() != arch.layers.size()) throw ShapeError("parameter store does not match architecture");
    const std::size_t N = batch.dim(0);
    ForwardResult<T> r;
    r.cache.mode = mode;
    if (keep_cache) r.cache.layers.resize(arch.layers.size());
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        auto& p = store.layers[i];
        LayerCache<T>* c = keep_cache ? &r.cache.layers[i] : nullptr;
        Tensor<T> y;
        switch (l.kind) {
            case LayerKind::conv: {
                if (x.rank() != 4 || p.weight.rank() != 4 || x.dim(1) != p.weight.dim(1)) {
                    throw ShapeError(arch.layer_label(i) + ": input " + shape_str(x.shape()) +
                                     " incompatible with weight " + shape_str(p.weight.shape()));
                }
                y = conv2d(x, p.weight, l.stride, l.padding);
                const std::size_t F = y.dim(1), P = y.dim(2) * y.dim(3);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) {
                        T* py = y.data() + (n * F + f) * P;
                        for (std::size_t k = 0; k < P; ++k) py[k] += p.bias[f];
                    }
                break;
            }
            case LayerKind::linear:
            case LayerKind::classifier_conv: {
                const std::size_t K = x.size() / N;
                if (p.weight.slice_size() != K || (l.kind == LayerKind::linear && x.rank() != 2)) {
                    throw ShapeError(arch.layer_label(i) + ": input " + shape_str(x.shape()) +
                                     " incompatible with weight " + shape_str(p.weight.shape()));
                }
                y = detail::affine_forward(x.reshaped({N, K}), p.weight, p.bias);
                break;
            }
            case LayerKind::batchnorm:
                y = detail::batchnorm_forward(x, p, mode, bn, c);
                break;
            case LayerKind::relu:
                y = x;
                for (auto& v : y.values()) v = v > T{0} ? v : T{0};
                break;
            case LayerKind::maxpool: {
                auto pr = maxpool2d(x, l.kh, l.stride, l.padding);
                y = std::move(pr.output);
                if (c) c->argmax = std::move(pr.argmax);
                break;
            }
            case LayerKind::flatten:
                y = x.reshaped({N, x.size() / N});
                break;
        }
        if (c) c->input = std::move(x);
        x = std::move(y);
    }
    r.logits = std::move(x);
    return r;
}

/// Logits only, eval mode.
template <typename T>
Tensor<T> predict(const ArchSpec& arch, const ParamStore<T>& store, const Tensor<T>& batch,
                  const BatchNormSettings& bn = {}) {
    // Eval mode never writes to the store.
    return forward(arch, const_cast<ParamStore<T>&>(store), batch, Mode::eval, bn, false).logits;
}

/// Parameter gradients for upstream gradient `logits_grad` [N, num_classes].
template <typename T>
Gradients<T> backward(const ArchSpec& arch, const ParamStore<T>& store, const ForwardCache<T>& cache,
                      const Tensor<T>& logits_grad) {
    if (cache.layers.size() != arch.layers.size() || store.layers.size() != arch.layers.size()) {
        throw ShapeError("backward: cache does not match architecture");
    }
    auto grads = zeros_like(store);
    Tensor<T> g = logits_grad;
    // Input gradients are not needed below the first learnable layer.
    std::size_t first_learnable = arch.layers.size();
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].learnable()) {
            first_learnable = i;
            break;
        }
    for (std::size_t i = arch.layers.size(); i-- > 0;) {
        const auto& l = arch.layers[i];
        const auto& p = store.layers[i];
        const auto& c = cache.layers[i];
        const bool need_input = i > first_learnable;
        const std::size_t N = c.input.dim(0);
        Tensor<T> gin;
        switch (l.kind) {
            case LayerKind::conv: {
                const std::size_t F = g.dim(1), P = g.dim(2) * g.dim(3);
                auto& gb = grads.layers[i].bias;
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) {
                        const T* pg = g.data() + (n * F + f) * P;
                        T s{0};
                        for (std::size_t k = 0; k < P; ++k) s += pg[k];
                        gb[f] += s;
                    }
                auto cg = conv2d_backward(c.input, p.weight, g, l.stride, l.padding, need_input);
                grads.layers[i].weight = std::move(cg.weight);
                gin = std::move(cg.input);
                break;
            }
            case LayerKind::linear:
            case LayerKind::classifier_conv: {
                const std::size_t F = g.dim(1), K = c.input.size() / N;
                if (g.shape() != Shape{N, F} || F != p.weight.dim(0)) {
                    throw ShapeError(arch.layer_label(i) + ": gradient " + shape_str(g.shape()) + " does not match");
                }
                auto& gl = grads.layers[i];
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t f = 0; f < F; ++f) gl.bias[f] += g[n * F + f];
                kernel::gemm_tn(F, K, N, g.data(), c.input.data(), gl.weight.data());
                if (need_input) {
                    gin = Tensor<T>(c.input.shape());
                    kernel::gemm_nn(N, K, F, g.data(), p.weight.data(), gin.data());
                }
                break;
            }
            case LayerKind::batchnorm:
                gin = detail::batchnorm_backward(g, p, c, cache.mode, grads.layers[i]);
                break;
            case LayerKind::relu:
                gin = std::move(g);
                for (std::size_t k = 0; k < gin.size(); ++k)
                    if (!(c.input[k] > T{0})) gin[k] = T{0};
                break;
            case LayerKind::maxpool:
                gin = maxpool2d_backward(c.input.shape(), c.argmax, g);
                break;
            case LayerKind::flatten:
                gin = g.reshaped(c.input.shape());
                break;
        }
        if (!need_input) break;
        g = std::move(gin);
    }
    return grads;
}

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

/// Mean cross-entropy of softmax(logits) against integer labels; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    LossResult<T> r{0.0, Tensor<T>(logits.shape())};
    for (std::size_t n = 0; n < N; ++n) {
        const int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= C) {
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
        }
        const T* z = logits.data() + n * C;
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < C; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
        double sum = 0.0;
        for (std::size_t k = 0; k < C; ++k) sum += std::exp(z[k] - zmax);
        const double lse = zmax + std::log(sum);
        r.loss += lse - z[y];
        for (std::size_t k = 0; k < C; ++k) {
            const double prob = std::exp(z[k] - lse);
            r.grad[n * C + k] = static_cast<T>((prob - (static_cast<int>(k) == y ? 1.0 : 0.0)) / static_cast<double>(N));
        }
    }
    r.loss /= static_cast<double>(N);
    return r;
}

/// Index of the largest logit per row (lowest index wins ties).
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    const std::size_t N = logits.dim(0), C = logits.dim(1);
    std::vector<int> out(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < C; ++k)
            if (logits[n * C + k] > logits[n * C + best]) best = k;
        out[n] = static_cast<int>(best);
    }
    return out;
}

} // namespace widen
