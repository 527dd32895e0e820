#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "data.hpp"
#include "network.hpp"
#include "optim.hpp"
#include "params.hpp"

namespace widen {

struct EvalResult {
    double accuracy = 0.0; // fraction in [0, 1]
    double loss = 0.0;
};

template <typename T>
EvalResult evaluate(const ArchSpec& arch, const ParamStore<T>& store, const Dataset<T>& data,
                    std::size_t batch_size = 256, const BatchNormSettings& bn = {}) {
    if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
    EvalResult r;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, data.size() - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        const auto b = gather(data, idx);
        const auto logits = predict(arch, store, b.images, bn);
        const auto pred = argmax_rows(logits);
        for (std::size_t k = 0; k < n; ++k) correct += pred[k] == b.labels[k];
        r.loss += cross_entropy(logits, std::span<const int>(b.labels)).loss * static_cast<double>(n);
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.loss /= static_cast<double>(data.size());
    return r;
}

/// Replace batch-norm running statistics by their average over one pass of `data`
/// (cumulative rather than exponential averaging).
template <typename T>
void recompute_bn_stats(const ArchSpec& arch, ParamStore<T>& store, const Dataset<T>& data,
                        std::size_t batch_size = 256, const BatchNormSettings& bn = {}) {
    std::vector<std::size_t> bn_layers;
    for (std::size_t i = 0; i < arch.layers.size(); ++i)
        if (arch.layers[i].kind == LayerKind::batchnorm) bn_layers.push_back(i);
    if (bn_layers.empty() || data.size() < 2) return;
    std::vector<Tensor<T>> mean_sum, var_sum;
    for (auto i : bn_layers) {
        mean_sum.emplace_back(store.layers[i].running_mean.shape());
        var_sum.emplace_back(store.layers[i].running_var.shape());
    }
    std::size_t batches = 0;
    BatchNormSettings replace = bn;
    replace.momentum = 1.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start + 1 < data.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, data.size() - start);
        if (n < 2) break;
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        const auto b = gather(data, idx);
        forward(arch, store, b.images, Mode::train, replace, false);
        for (std::size_t k = 0; k < bn_layers.size(); ++k) {
            mean_sum[k] += store.layers[bn_layers[k]].running_mean;
            var_sum[k] += store.layers[bn_layers[k]].running_var;
        }
        ++batches;
    }
    for (std::size_t k = 0; k < bn_layers.size(); ++k) {
        const T inv = T{1} / static_cast<T>(batches);
        store.layers[bn_layers[k]].running_mean = mean_sum[k] * inv;
        store.layers[bn_layers[k]].running_var = var_sum[k] * inv;
    }
}

struct EpochResult {
    double mean_loss = 0.0;
    std::size_t steps = 0;
    bool interrupted = false;
};

/// One pass over `data` in an order drawn from `rng`. After every optimizer step
/// `on_step()` is called; returning true ends the epoch early.
template <typename T, typename Hook>
EpochResult train_epoch(const ArchSpec& arch, ParamStore<T>& store, Gradients<T>& velocity, const TrainConfig& cfg,
                        const Dataset<T>& data, Rng& rng, std::size_t epoch, Hook&& on_step) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const BatchNormSettings bn{cfg.bn_epsilon, 0.1};
    EpochResult r;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        if (n < 2 && start > 0) break; // a single-sample tail breaks batch statistics
        auto b = gather(data, std::span<const std::size_t>(order).subspan(start, n));
        b.images = augment(std::move(b.images), cfg.flips, cfg.max_translate, rng);
        auto fr = forward(arch, store, b.images, Mode::train, bn);
        const auto loss = cross_entropy(fr.logits, std::span<const int>(b.labels));
        if (!std::isfinite(loss.loss)) {
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(r.steps));
        }
        const auto grads = backward(arch, store, fr.cache, loss.grad);
        sgd_step(store, grads, velocity, cfg, epoch);
        loss_sum += loss.loss;
        ++r.steps;
        if (on_step()) {
            r.interrupted = true;
            break;
        }
    }
    r.mean_loss = r.steps ? loss_sum / static_cast<double>(r.steps) : 0.0;
    return r;
}

template <typename T>
struct TrainResult {
    ParamStore<T> store;
    ParamStore<T> init; // state right after initialization
    std::vector<double> epoch_loss;
};

/// Fixed-architecture training from a He initialization drawn from `rng`.
template <typename T>
TrainResult<T> train(const ArchSpec& arch, const TrainConfig& cfg, const Dataset<T>& data, Rng& rng) {
    cfg.validate();
    TrainResult<T> r;
    r.store = he_init<T>(arch, rng);
    r.init = r.store;
    auto velocity = zeros_like(r.store);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const auto er = train_epoch(arch, r.store, velocity, cfg, data, rng, e, [] { return false; });
        r.epoch_loss.push_back(er.mean_loss);
    }
    return r;
}

} // namespace widen
