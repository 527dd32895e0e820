#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "params.hpp"

namespace widen {

struct TrainConfig {
    double lr0 = 0.005;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 60;
    /// (epoch, multiplier): from `epoch` on the rate is additionally multiplied.
    std::vector<std::pair<std::size_t, double>> schedule{{30, 0.2}};
    double bn_epsilon = 1e-3;
    bool flips = false;
    std::size_t max_translate = 0;

    void validate() const {
        if (!(lr0 > 0.0)) throw ConfigError("train.lr0: must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum: must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be >= 0");
        if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
        if (!(bn_epsilon > 0.0)) throw ConfigError("train.bn_epsilon: must be > 0");
        for (const auto& [e, m] : schedule)
            if (!(m > 0.0)) throw ConfigError("train.schedule: multipliers must be > 0");
    }

    /// MNIST recipe: lr 0.005, 60 epochs, /5 after 30.
    static TrainConfig mnist() { return TrainConfig{}; }

    /// CIFAR recipe: lr 0.1, 200 epochs, /5 at every multiple of 60, flips and 4px shifts.
    static TrainConfig cifar() {
        TrainConfig c;
        c.lr0 = 0.1;
        c.epochs = 200;
        c.schedule = {{60, 0.2}, {120, 0.2}, {180, 0.2}};
        c.flips = true;
        c.max_translate = 4;
        return c;
    }
};

/// lr0 times every multiplier whose epoch is <= `epoch` (epochs counted from 0).
inline double schedule_lr(const TrainConfig& cfg, std::size_t epoch) {
    double lr = cfg.lr0;
    for (const auto& [at, mult] : cfg.schedule)
        if (at <= epoch) lr *= mult;
    return lr;
}

/// SGD on the L2-regularized objective. Only conv/linear weights are decayed.
///   g' = g + alpha * theta
///   v  = m * v + g'
///   theta -= lr * (g' + m * v)   (Nesterov)   or   theta -= lr * v
template <typename T>
void sgd_step(ParamStore<T>& store, const Gradients<T>& grads, Gradients<T>& velocity, const TrainConfig& cfg,
              std::size_t epoch) {
    if (grads.layers.size() != store.layers.size() || velocity.layers.size() != store.layers.size()) {
        throw ShapeError("sgd_step: gradient/velocity layout does not match parameter store");
    }
    const T lr = static_cast<T>(schedule_lr(cfg, epoch));
    const T m = static_cast<T>(cfg.momentum);
    const T alpha = static_cast<T>(cfg.weight_decay);
    auto update = [&](Tensor<T>& theta, const Tensor<T>& g, Tensor<T>& v, bool decay) {
        if (theta.empty()) return;
        theta.require_same_shape(g, "sgd_step gradient");
        theta.require_same_shape(v, "sgd_step velocity");
        const T a = decay ? alpha : T{0};
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const T ge = g[k] + a * theta[k];
            v[k] = m * v[k] + ge;
            theta[k] -= cfg.nesterov ? lr * (ge + m * v[k]) : lr * v[k];
        }
    };
    for (std::size_t i = 0; i < store.layers.size(); ++i) {
        auto& p = store.layers[i];
        const auto& g = grads.layers[i];
        auto& v = velocity.layers[i];
        update(p.weight, g.weight, v.weight, true);
        update(p.bias, g.bias, v.bias, false);
        update(p.gamma, g.gamma, v.gamma, false);
        update(p.beta, g.beta, v.beta, false);
    }
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
    try {
        base.lr0 = j.value("lr0", base.lr0);
        base.momentum = j.value("momentum", base.momentum);
        base.nesterov = j.value("nesterov", base.nesterov);
        base.weight_decay = j.value("weight_decay", base.weight_decay);
        base.batch_size = j.value("batch_size", base.batch_size);
        base.epochs = j.value("epochs", base.epochs);
        base.bn_epsilon = j.value("bn_epsilon", base.bn_epsilon);
        base.flips = j.value("flips", base.flips);
        base.max_translate = j.value("max_translate", base.max_translate);
        if (j.contains("schedule")) {
            base.schedule.clear();
            for (const auto& s : j.at("schedule")) base.schedule.emplace_back(s.at(0).get<std::size_t>(), s.at(1).get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    base.validate();
    return base;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& [e, m] : c.schedule) s.push_back({e, m});
    return {{"lr0", c.lr0},         {"momentum", c.momentum},
            {"nesterov", c.nesterov}, {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size}, {"epochs", c.epochs},
            {"schedule", s},          {"bn_epsilon", c.bn_epsilon},
            {"flips", c.flips},       {"max_translate", c.max_translate}};
}

} // namespace widen
