#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace widen {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major n-dimensional array.
///
/// Convolution weights are stored out-major as [out_features, in_features, kh, kw]
/// so that the slice belonging to one output feature is contiguous.
template <typename T = double>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        for (auto e : shape_) {
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
        }
    }

    Tensor(Shape shape, std::initializer_list<T> values)
        : Tensor(std::move(shape), std::vector<T>(values)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor normal(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Number of elements belonging to one index of the leading axis.
    std::size_t slice_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    std::span<T> slice(std::size_t i) {
        const auto n = slice_size();
        return std::span<T>(data_).subspan(i * n, n);
    }
    std::span<const T> slice(std::size_t i) const {
        const auto n = slice_size();
        return std::span<const T>(data_).subspan(i * n, n);
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    Tensor& operator+=(T s) {
        for (auto& v : data_) v += s;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, T s) { return a *= s; }
    friend Tensor operator*(T s, Tensor a) { return a *= s; }

    bool operator==(const Tensor& o) const = default;

    void require_same_shape(const Tensor& o, const char* what) const {
        if (shape_ != o.shape_) {
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                             shape_str(o.shape_));
        }
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Subtract `means[c]` from every element whose index along `axis` is c.
template <typename T>
Tensor<T> subtract_along(const Tensor<T>& t, std::size_t axis, const Tensor<T>& means) {
    if (axis >= t.rank() || means.size() != t.dim(axis)) {
        throw ShapeError("subtract_along: " + shape_str(means.shape()) + " does not broadcast over axis " +
                         std::to_string(axis) + " of " + shape_str(t.shape()));
    }
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.dim(a);
    const std::size_t extent = t.dim(axis);
    Tensor<T> out = t;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= means[(i / inner) % extent];
    return out;
}

// Binary layout, all integers and values little-endian:
//   u32 element_bytes (4 or 8) | u32 rank | u64 extent * rank | value * product(extents)

namespace detail {

template <typename U>
void write_le(std::ostream& os, U value) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
    static_assert(std::is_unsigned_v<U>);
    unsigned char buf[sizeof(U)];
    is.read(reinterpret_cast<char*>(buf), sizeof(U));
    if (!is) throw ParseError("unexpected end of tensor stream");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
    return value;
}

} // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    detail::write_le<std::uint32_t>(os, sizeof(T));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::write_le<std::uint64_t>(os, e);
    for (T v : t.values()) detail::write_le<Bits>(os, std::bit_cast<Bits>(v));
}

/// Reads a tensor written with either element width and converts to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    const auto width = detail::read_le<std::uint32_t>(is);
    if (width != 4 && width != 8) throw ParseError("unsupported tensor element width " + std::to_string(width));
    const auto rank = detail::read_le<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw ParseError("unsupported tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        e = detail::read_le<std::uint64_t>(is);
        if (e == 0 || e > (std::uint64_t{1} << 32)) throw ParseError("invalid tensor extent");
    }
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) {
        if (width == 8) {
            v = static_cast<T>(std::bit_cast<double>(detail::read_le<std::uint64_t>(is)));
        } else {
            v = static_cast<T>(std::bit_cast<float>(detail::read_le<std::uint32_t>(is)));
        }
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

} // namespace widen
