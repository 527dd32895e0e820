#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace widen {

// Row-major GEMM kernels on raw buffers. C is accumulated into.
namespace kernel {

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        const T* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a[k];
            if (av == T{0}) continue;
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        for (std::size_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T acc{0};
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            C[i * N + j] += acc;
        }
    }
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const T av = a[i];
            if (av == T{0}) continue;
            T* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

} // namespace kernel

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    Tensor<T> c({a.dim(0), b.dim(1)});
    kernel::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data());
    return c;
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kh, kw, stride, padding;

    std::size_t out_height() const { return (height + 2 * padding - kh) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * padding - kw) / stride + 1; }
    std::size_t patch() const { return channels * kh * kw; }
    std::size_t positions() const { return out_height() * out_width(); }

    bool valid() const {
        return stride >= 1 && kh >= 1 && kw >= 1 && height + 2 * padding >= kh && width + 2 * padding >= kw;
    }
};

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const std::size_t oh = g.out_height(), ow = g.out_width(), P = oh * ow;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t y = 0; y < oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t x_ = 0; x_ < ow; ++x_) {
                        const auto ix = static_cast<std::ptrdiff_t>(x_ * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        row[y * ow + x_] = inside ? x[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                                                     static_cast<std::size_t>(ix)]
                                                  : T{0};
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* x) {
    const std::size_t oh = g.out_height(), ow = g.out_width(), P = oh * ow;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t y = 0; y < oh; ++y) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t x_ = 0; x_ < ow; ++x_) {
                        const auto ix = static_cast<std::ptrdiff_t>(x_ * g.stride + j) - static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        x[(c * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)] +=
                            row[y * ow + x_];
                    }
                }
            }
        }
    }
}

inline ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
    if (input.size() != 4 || weight.size() != 4 || input[1] != weight[1]) {
        throw ShapeError("conv2d: input " + shape_str(input) + " incompatible with weight " + shape_str(weight));
    }
    ConvGeometry g{input[1], input[2], input[3], weight[2], weight[3], stride, padding};
    if (!g.valid()) {
        throw ShapeError("conv2d: kernel of weight " + shape_str(weight) + " does not fit input " + shape_str(input) +
                         " with stride " + std::to_string(stride) + ", padding " + std::to_string(padding));
    }
    return g;
}

} // namespace detail

/// Cross-correlation (no kernel flip). input [N,C,H,W], weight [F,C,kh,kw].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride = 1, std::size_t padding = 0) {
    const auto g = detail::conv_geometry(input.shape(), weight.shape(), stride, padding);
    const std::size_t N = input.dim(0), F = weight.dim(0), P = g.positions(), CK = g.patch();
    Tensor<T> out({N, F, g.out_height(), g.out_width()});
    std::vector<T> cols(CK * P);
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col(input.data() + n * in_stride, g, cols.data());
        kernel::gemm_nn(F, P, CK, weight.data(), cols.data(), out.data() + n * F * P);
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weight;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                             std::size_t stride, std::size_t padding, bool need_input_grad = true) {
    const auto g = detail::conv_geometry(input.shape(), weight.shape(), stride, padding);
    const std::size_t N = input.dim(0), F = weight.dim(0), P = g.positions(), CK = g.patch();
    const Shape expected{N, F, g.out_height(), g.out_width()};
    if (grad_out.shape() != expected) {
        throw ShapeError("conv2d_backward: gradient " + shape_str(grad_out.shape()) + " expected " + shape_str(expected));
    }
    ConvGrads<T> grads{need_input_grad ? Tensor<T>(input.shape()) : Tensor<T>{}, Tensor<T>(weight.shape())};
    std::vector<T> cols(CK * P), gcols(CK * P);
    const std::size_t in_stride = g.channels * g.height * g.width;
    for (std::size_t n = 0; n < N; ++n) {
        const T* go = grad_out.data() + n * F * P;
        detail::im2col(input.data() + n * in_stride, g, cols.data());
        kernel::gemm_nt(F, CK, P, go, cols.data(), grads.weight.data());
        if (need_input_grad) {
            std::fill(gcols.begin(), gcols.end(), T{0});
            kernel::gemm_tn(CK, P, F, weight.data(), go, gcols.data());
            detail::col2im_add(gcols.data(), g, grads.input.data() + n * in_stride);
        }
    }
    return grads;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax; // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride, std::size_t padding = 0) {
    if (input.rank() != 4) throw ShapeError("maxpool2d: expected 4-d input, got " + shape_str(input.shape()));
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (stride == 0 || kernel == 0 || H + 2 * padding < kernel || W + 2 * padding < kernel || padding >= kernel) {
        throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " does not fit input " + shape_str(input.shape()));
    }
    const std::size_t OH = (H + 2 * padding - kernel) / stride + 1, OW = (W + 2 * padding - kernel) / stride + 1;
    PoolResult<T> r{Tensor<T>({N, C, OH, OW}), std::vector<std::size_t>(N * C * OH * OW)};
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* x = input.data() + nc * H * W;
        for (std::size_t y = 0; y < OH; ++y) {
            for (std::size_t x_ = 0; x_ < OW; ++x_) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_i = 0;
                for (std::size_t i = 0; i < kernel; ++i) {
                    const auto iy = static_cast<std::ptrdiff_t>(y * stride + i) - static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t j = 0; j < kernel; ++j) {
                        const auto ix = static_cast<std::ptrdiff_t>(x_ * stride + j) - static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        const std::size_t idx = static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
                        if (x[idx] > best) {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                const std::size_t o = (nc * OH + y) * OW + x_;
                r.output[o] = best;
                r.argmax[o] = nc * H * W + best_i;
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& grad_out) {
    if (argmax.size() != grad_out.size()) throw ShapeError("maxpool2d_backward: cache does not match gradient");
    Tensor<T> gin(input_shape);
    for (std::size_t o = 0; o < grad_out.size(); ++o) gin[argmax[o]] += grad_out[o];
    return gin;
}

enum class Reduction { sum, mean, max };

/// Reduce over the given axes; reduced extents are removed (a full reduction yields shape [1]).
template <typename T>
Tensor<T> reduce(const Tensor<T>& t, std::vector<std::size_t> axes, Reduction kind) {
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= t.rank()) {
            throw ShapeError("reduce: axis " + std::to_string(axes[i]) + " out of range for " + shape_str(t.shape()));
        }
        if (i && axes[i] == axes[i - 1]) throw ShapeError("reduce: duplicate axis " + std::to_string(axes[i]));
    }
    std::vector<bool> reduced(t.rank(), false);
    for (auto a : axes) reduced[a] = true;
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t a = 0; a < t.rank(); ++a) {
        if (reduced[a]) count *= t.dim(a);
        else out_shape.push_back(t.dim(a));
    }
    if (out_shape.empty()) out_shape = {1};
    const T init = kind == Reduction::max ? -std::numeric_limits<T>::infinity() : T{0};
    Tensor<T> out(out_shape, init);

    std::vector<std::size_t> idx(t.rank(), 0);
    for (std::size_t flat = 0; flat < t.size(); ++flat) {
        std::size_t o = 0;
        for (std::size_t a = 0; a < t.rank(); ++a) {
            if (!reduced[a]) o = o * t.dim(a) + idx[a];
        }
        if (kind == Reduction::max) out[o] = std::max(out[o], t[flat]);
        else out[o] += t[flat];
        for (std::size_t a = t.rank(); a-- > 0;) {
            if (++idx[a] < t.dim(a)) break;
            idx[a] = 0;
        }
    }
    if (kind == Reduction::mean) out *= T{1} / static_cast<T>(count);
    return out;
}

} // namespace widen
