#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace widen {

template <typename T = double>
struct Dataset {
    Tensor<T> images; // [N, C, H, W]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string split = "train";
    std::vector<double> mean, stddev; // per-channel statistics applied by normalize(), empty if raw

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

    void validate() const {
        if (images.rank() != 4 || images.dim(0) != labels.size()) {
            throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for images " +
                             shape_str(images.shape()));
        }
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                throw ConfigError("dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
};

template <typename T>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
};

template <typename T>
Batch<T> gather(const Dataset<T>& ds, std::span<const std::size_t> indices) {
    auto shape = ds.images.shape();
    const std::size_t stride = ds.images.slice_size();
    shape[0] = indices.size();
    Batch<T> b{Tensor<T>(shape), std::vector<int>(indices.size())};
    for (std::size_t k = 0; k < indices.size(); ++k) {
        auto src = ds.images.slice(indices[k]);
        std::copy(src.begin(), src.end(), b.images.data() + k * stride);
        b.labels[k] = ds.labels[indices[k]];
    }
    return b;
}

// ---------------------------------------------------------------------------
// IDX (MNIST) files: big-endian u32 magic, big-endian u32 dims, unsigned bytes.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

} // namespace detail

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<unsigned char> pixels;
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& b, const std::string& what = "images") {
    if (b.size() < 16) throw ParseError(what + ": file too short for an IDX image header (" + std::to_string(b.size()) + " bytes)");
    if (detail::be32(b, 0) != idx_images_magic) throw ParseError(what + ": bad magic number for IDX images");
    IdxImages img{detail::be32(b, 4), detail::be32(b, 8), detail::be32(b, 12), {}};
    const std::size_t need = img.count * img.rows * img.cols;
    if (b.size() - 16 < need) {
        throw ParseError(what + ": truncated, expected " + std::to_string(need) + " pixel bytes, found " +
                         std::to_string(b.size() - 16));
    }
    img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
    return img;
}

inline std::vector<unsigned char> parse_idx_labels(const std::vector<unsigned char>& b, const std::string& what = "labels") {
    if (b.size() < 8) throw ParseError(what + ": file too short for an IDX label header (" + std::to_string(b.size()) + " bytes)");
    if (detail::be32(b, 0) != idx_labels_magic) throw ParseError(what + ": bad magic number for IDX labels");
    const std::size_t n = detail::be32(b, 4);
    if (b.size() - 8 < n) {
        throw ParseError(what + ": truncated, expected " + std::to_string(n) + " labels, found " + std::to_string(b.size() - 8));
    }
    return std::vector<unsigned char>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

inline std::vector<unsigned char> encode_idx_images(const IdxImages& img) {
    std::vector<unsigned char> b;
    detail::put_be32(b, idx_images_magic);
    detail::put_be32(b, static_cast<std::uint32_t>(img.count));
    detail::put_be32(b, static_cast<std::uint32_t>(img.rows));
    detail::put_be32(b, static_cast<std::uint32_t>(img.cols));
    b.insert(b.end(), img.pixels.begin(), img.pixels.end());
    return b;
}

inline std::vector<unsigned char> encode_idx_labels(const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> b;
    detail::put_be32(b, idx_labels_magic);
    detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

struct MnistOptions {
    /// Zero-pad 28x28 to 32x32 and repeat across three channels.
    bool cifar_layout = false;
    std::size_t num_classes = 10;
};

/// Load an IDX image/label pair. Pixels are scaled to [0, 1].
template <typename T = double>
Dataset<T> load_mnist_idx(const std::string& images_path, const std::string& labels_path, MnistOptions opt = {}) {
    const auto img = parse_idx_images(detail::read_file(images_path), images_path);
    const auto lab = parse_idx_labels(detail::read_file(labels_path), labels_path);
    if (img.count != lab.size()) {
        throw ParseError("image count " + std::to_string(img.count) + " does not match label count " +
                         std::to_string(lab.size()));
    }
    if (img.count == 0 || img.rows == 0 || img.cols == 0) throw ParseError(images_path + ": no images");
    Dataset<T> ds;
    ds.num_classes = opt.num_classes;
    const std::size_t C = opt.cifar_layout ? 3 : 1;
    const std::size_t H = opt.cifar_layout ? img.rows + 4 : img.rows;
    const std::size_t W = opt.cifar_layout ? img.cols + 4 : img.cols;
    const std::size_t pad = opt.cifar_layout ? 2 : 0;
    ds.images = Tensor<T>({img.count, C, H, W});
    for (std::size_t n = 0; n < img.count; ++n) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < img.rows; ++y)
                for (std::size_t x = 0; x < img.cols; ++x)
                    ds.images.at(n, c, y + pad, x + pad) =
                        static_cast<T>(img.pixels[(n * img.rows + y) * img.cols + x] / 255.0);
        ds.labels.push_back(lab[n]);
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct ChannelStats {
    std::vector<double> mean, stddev;
};

template <typename T>
ChannelStats channel_stats(const Dataset<T>& ds) {
    const std::size_t N = ds.images.dim(0), C = ds.images.dim(1), inner = ds.images.dim(2) * ds.images.dim(3);
    ChannelStats s{std::vector<double>(C), std::vector<double>(C)};
    const double count = static_cast<double>(N * inner);
    for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < inner; ++k) sum += ds.images[(n * C + c) * inner + k];
        const double mu = sum / count;
        double var = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < inner; ++k) {
                const double d = ds.images[(n * C + c) * inner + k] - mu;
                var += d * d;
            }
        s.mean[c] = mu;
        s.stddev[c] = std::sqrt(var / count);
    }
    return s;
}

/// Per-channel (x - mean) / std with statistics taken from `stats_from` (a training split).
template <typename T>
Dataset<T> normalize(const Dataset<T>& ds, const Dataset<T>& stats_from) {
    if (stats_from.split != "train") {
        throw ConfigError("normalize: statistics must come from a training split, got '" + stats_from.split + "'");
    }
    if (!stats_from.mean.empty()) throw ConfigError("normalize: statistics source is already normalized");
    const auto s = channel_stats(stats_from);
    if (s.mean.size() != ds.images.dim(1)) throw ShapeError("normalize: channel count differs from statistics source");
    for (std::size_t c = 0; c < s.stddev.size(); ++c)
        if (!(s.stddev[c] > 0.0)) throw NumericError("normalize: channel " + std::to_string(c) + " has zero variance");
    Dataset<T> out = ds;
    const std::size_t C = ds.images.dim(1), inner = ds.images.dim(2) * ds.images.dim(3);
    for (std::size_t i = 0; i < out.images.size(); ++i) {
        const std::size_t c = (i / inner) % C;
        out.images[i] = static_cast<T>((out.images[i] - s.mean[c]) / s.stddev[c]);
    }
    out.mean = s.mean;
    out.stddev = s.stddev;
    return out;
}

template <typename T>
Dataset<T> denormalize(const Dataset<T>& ds) {
    if (ds.mean.empty()) return ds;
    Dataset<T> out = ds;
    const std::size_t C = ds.images.dim(1), inner = ds.images.dim(2) * ds.images.dim(3);
    for (std::size_t i = 0; i < out.images.size(); ++i) {
        const std::size_t c = (i / inner) % C;
        out.images[i] = static_cast<T>(out.images[i] * ds.stddev[c] + ds.mean[c]);
    }
    out.mean.clear();
    out.stddev.clear();
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Shift image content by (dy, dx); uncovered pixels become zero.
template <typename T>
void translate_image(std::span<T> img, std::size_t C, std::size_t H, std::size_t W, long dy, long dx) {
    std::vector<T> src(img.begin(), img.end());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
                const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(H) && sx < static_cast<long>(W);
                img[(c * H + y) * W + x] = inside ? src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] : T{0};
            }
}

template <typename T>
void flip_horizontal(std::span<T> img, std::size_t C, std::size_t H, std::size_t W) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            T* row = img.data() + (c * H + y) * W;
            std::reverse(row, row + W);
        }
}

/// Per image: flip with p = 0.5 (if enabled), then shift by uniform offsets in [-t, t].
template <typename T>
Tensor<T> augment(Tensor<T> batch, bool flips, std::size_t max_translate, Rng& rng) {
    if (!flips && max_translate == 0) return batch;
    const std::size_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    const auto t = static_cast<std::int64_t>(max_translate);
    for (std::size_t n = 0; n < N; ++n) {
        auto img = batch.slice(n);
        if (flips && rng.coin()) flip_horizontal(img, C, H, W);
        if (t > 0) {
            const long dy = static_cast<long>(rng.between(-t, t));
            const long dx = static_cast<long>(rng.between(-t, t));
            if (dy || dx) translate_image(img, C, H, W, dy, dx);
        }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

/// Class-conditional oriented-pattern images. Each class owns `clusters` templates,
/// each the sum of two random gratings; samples are a jittered template plus
/// Gaussian clutter of standard deviation `noise` (templates have unit RMS).
struct SyntheticTaskSpec {
    std::size_t num_classes = 2;
    std::size_t image_size = 8;
    std::size_t channels = 1;
    std::size_t clusters = 1;
    double noise = 0.3;
    std::size_t jitter = 0;
    std::size_t train_size = 512;
    std::size_t test_size = 512;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("data.num_classes: must be >= 2");
        if (image_size < 1) throw ConfigError("data.image_size: must be >= 1");
        if (channels < 1 || clusters < 1) throw ConfigError("data: channels and clusters must be >= 1");
        if (!(noise >= 0.0)) throw ConfigError("data.noise: must be >= 0");
        if (train_size < 1 || test_size < 1) throw ConfigError("data: split sizes must be >= 1");
    }
};

template <typename T = double>
struct TrainTest {
    Dataset<T> train, test;
};

template <typename T = double>
TrainTest<T> gen_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t S = spec.image_size, C = spec.channels, K = spec.num_classes * spec.clusters;
    std::vector<std::vector<double>> templates(K, std::vector<double>(C * S * S));
    for (auto& tpl : templates) {
        for (int g = 0; g < 2; ++g) {
            const double theta = rng.uniform(0.0, std::numbers::pi);
            const double freq = rng.uniform(0.5, 2.5) * 2.0 * std::numbers::pi / static_cast<double>(S);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            std::vector<double> gain(C);
            for (auto& v : gain) v = rng.uniform(0.5, 1.0) * (rng.coin() ? 1.0 : -1.0);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < S; ++y)
                    for (std::size_t x = 0; x < S; ++x) {
                        const double u = std::cos(theta) * static_cast<double>(x) + std::sin(theta) * static_cast<double>(y);
                        tpl[(c * S + y) * S + x] += gain[c] * std::cos(freq * u + phase);
                    }
        }
        double ss = 0.0;
        for (double v : tpl) ss += v * v;
        const double rms = std::sqrt(ss / static_cast<double>(tpl.size()));
        for (auto& v : tpl) v /= rms > 0.0 ? rms : 1.0;
    }

    auto make = [&](std::size_t n, const char* split, Rng& r) {
        Dataset<T> ds;
        ds.num_classes = spec.num_classes;
        ds.split = split;
        ds.images = Tensor<T>({n, C, S, S});
        ds.labels.resize(n);
        const auto jit = static_cast<std::int64_t>(spec.jitter);
        for (std::size_t i = 0; i < n; ++i) {
            const auto label = static_cast<int>(i % spec.num_classes);
            const auto cluster = static_cast<std::size_t>(r.below(spec.clusters));
            const auto& tpl = templates[static_cast<std::size_t>(label) * spec.clusters + cluster];
            auto img = ds.images.slice(i);
            for (std::size_t k = 0; k < img.size(); ++k) img[k] = static_cast<T>(tpl[k]);
            if (jit > 0) {
                const long dy = static_cast<long>(r.between(-jit, jit)), dx = static_cast<long>(r.between(-jit, jit));
                translate_image(img, C, S, S, dy, dx);
            }
            for (auto& v : img) v += static_cast<T>(r.normal(0.0, spec.noise));
            ds.labels[i] = label;
        }
        return ds;
    };
    Rng train_rng = rng.split();
    Rng test_rng = rng.split();
    return {make(spec.train_size, "train", train_rng), make(spec.test_size, "test", test_rng)};
}

inline SyntheticTaskSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticTaskSpec s;
    try {
        s.num_classes = j.value("num_classes", s.num_classes);
        s.image_size = j.value("image_size", s.image_size);
        s.channels = j.value("channels", s.channels);
        s.clusters = j.value("clusters", s.clusters);
        s.noise = j.value("noise", s.noise);
        s.jitter = j.value("jitter", s.jitter);
        s.train_size = j.value("train_size", s.train_size);
        s.test_size = j.value("test_size", s.test_size);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("data: ") + e.what());
    }
    s.validate();
    return s;
}

} // namespace widen
