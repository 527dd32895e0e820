#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace widen {

enum class LayerKind { conv, linear, batchnorm, relu, maxpool, flatten, classifier_conv };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::linear: return "linear";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::classifier_conv: return "classifier-conv";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
    static const std::map<std::string, LayerKind> kinds{
        {"conv", LayerKind::conv},       {"linear", LayerKind::linear},   {"batchnorm", LayerKind::batchnorm},
        {"relu", LayerKind::relu},       {"maxpool", LayerKind::maxpool}, {"flatten", LayerKind::flatten},
        {"classifier-conv", LayerKind::classifier_conv}};
    auto it = kinds.find(s);
    if (it == kinds.end()) throw ConfigError("unknown layer kind '" + s + "'");
    return it->second;
}

inline bool is_learnable(LayerKind k) {
    return k == LayerKind::conv || k == LayerKind::linear || k == LayerKind::classifier_conv;
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t width = 0; // output features of conv / linear / classifier-conv
    std::size_t kh = 1, kw = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::optional<int> couple_group;
    std::string name;

    bool learnable() const { return is_learnable(kind); }
    bool operator==(const LayerSpec&) const = default;
};

struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    Shape input_shape; // [C, H, W]
    std::size_t num_classes = 0;

    bool operator==(const ArchSpec&) const = default;

    /// The terminal learnable layer producing the logits.
    std::size_t classifier_index() const { return layers.size() - 1; }

    bool expandable(std::size_t i) const { return layers[i].learnable() && i != classifier_index(); }

    std::vector<std::size_t> learnable_layers() const {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].learnable()) ids.push_back(i);
        return ids;
    }

    std::vector<std::size_t> expandable_layers() const {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (expandable(i)) ids.push_back(i);
        return ids;
    }

    /// Members of the coupling group of layer i (just {i} when uncoupled).
    std::vector<std::size_t> group_of(std::size_t i) const {
        if (!layers[i].couple_group) return {i};
        std::vector<std::size_t> ids;
        for (std::size_t j = 0; j < layers.size(); ++j)
            if (layers[j].couple_group == layers[i].couple_group) ids.push_back(j);
        return ids;
    }

    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w;
        for (auto i : expandable_layers()) w.push_back(layers[i].width);
        return w;
    }

    std::string layer_label(std::size_t i) const {
        const auto& l = layers[i];
        return "layer " + std::to_string(i) + " (" + (l.name.empty() ? to_string(l.kind) : l.name) + ")";
    }
};

/// Resolved per-layer shapes (batch axis omitted).
struct LayerPlan {
    Shape in;
    Shape out;
    Shape weight; // empty for parameter-free layers
    std::size_t fan_in = 0;
};

struct ArchPlan {
    std::vector<LayerPlan> layers;
    std::size_t param_count = 0;
};

/// Dry-run shape pass. Throws ShapeError naming the offending layer.
inline ArchPlan plan(const ArchSpec& arch) {
    if (arch.layers.empty()) throw ShapeError("architecture '" + arch.name + "' has no layers");
    if (arch.input_shape.size() != 3) throw ShapeError("input_shape must be [C,H,W], got " + shape_str(arch.input_shape));
    if (arch.num_classes < 1) throw ShapeError("num_classes must be positive");

    const auto& last = arch.layers.back();
    if (last.kind != LayerKind::linear && last.kind != LayerKind::classifier_conv) {
        throw ShapeError("terminal " + arch.layer_label(arch.classifier_index()) + " must be linear or classifier-conv");
    }
    if (last.width != arch.num_classes) {
        throw ShapeError("terminal " + arch.layer_label(arch.classifier_index()) + " has width " +
                         std::to_string(last.width) + " but num_classes is " + std::to_string(arch.num_classes));
    }

    std::map<int, std::size_t> group_width;
    ArchPlan p;
    Shape cur = arch.input_shape;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        auto fail = [&](const std::string& why) {
            throw ShapeError(arch.layer_label(i) + ": " + why + " (input " + shape_str(cur) + ")");
        };
        if (l.kind == LayerKind::classifier_conv && i != arch.classifier_index()) fail("classifier-conv must be terminal");
        if (l.learnable() && l.width < 1) fail("width must be at least 1");
        if (l.couple_group) {
            if (!l.learnable()) fail("only learnable layers can be coupled");
            auto [it, fresh] = group_width.emplace(*l.couple_group, l.width);
            if (!fresh && it->second != l.width) {
                fail("coupled group " + std::to_string(*l.couple_group) + " has unequal widths " +
                     std::to_string(it->second) + " and " + std::to_string(l.width));
            }
        }

        LayerPlan lp;
        lp.in = cur;
        switch (l.kind) {
            case LayerKind::conv: {
                if (cur.size() != 3) fail("conv expects a [C,H,W] input");
                ConvGeometry g{cur[0], cur[1], cur[2], l.kh, l.kw, l.stride, l.padding};
                if (!g.valid()) fail("kernel does not fit");
                lp.weight = {l.width, cur[0], l.kh, l.kw};
                lp.fan_in = g.patch();
                lp.out = {l.width, g.out_height(), g.out_width()};
                p.param_count += l.width * g.patch() + l.width;
                break;
            }
            case LayerKind::classifier_conv: {
                if (cur.size() != 3) fail("classifier-conv expects a [C,H,W] input");
                lp.weight = {l.width, cur[0], cur[1], cur[2]};
                lp.fan_in = shape_size(cur);
                lp.out = {l.width};
                p.param_count += l.width * lp.fan_in + l.width;
                break;
            }
            case LayerKind::linear: {
                if (cur.size() != 1) fail("linear expects a flattened input");
                lp.weight = {l.width, cur[0]};
                lp.fan_in = cur[0];
                lp.out = {l.width};
                p.param_count += l.width * cur[0] + l.width;
                break;
            }
            case LayerKind::batchnorm:
                lp.out = cur;
                p.param_count += 2 * cur[0];
                break;
            case LayerKind::relu:
                lp.out = cur;
                break;
            case LayerKind::maxpool: {
                if (cur.size() != 3) fail("maxpool expects a [C,H,W] input");
                if (l.kh != l.kw) fail("maxpool windows must be square");
                if (l.stride < 1 || cur[1] + 2 * l.padding < l.kh || cur[2] + 2 * l.padding < l.kw || l.padding >= l.kh)
                    fail("pooling window does not fit");
                lp.out = {cur[0], (cur[1] + 2 * l.padding - l.kh) / l.stride + 1,
                          (cur[2] + 2 * l.padding - l.kw) / l.stride + 1};
                break;
            }
            case LayerKind::flatten:
                lp.out = {shape_size(cur)};
                break;
        }
        cur = lp.out;
        p.layers.push_back(std::move(lp));
    }
    return p;
}

inline std::size_t param_count(const ArchSpec& arch) { return plan(arch).param_count; }

/// Replace pooling by strided convolutions (each with its own width, initially that
/// of the preceding convolution) and the fully-connected head by one affine
/// classifier-conv spanning the full spatial extent.
inline ArchSpec all_conv_transform(const ArchSpec& arch) {
    ArchSpec out = arch;
    out.name = arch.name.empty() ? "all-conv" : arch.name + "-allconv";
    out.layers.clear();

    std::size_t last_width = arch.input_shape.empty() ? 1 : arch.input_shape[0];
    std::size_t pools = 0;
    std::size_t head = arch.layers.size();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (arch.layers[i].kind == LayerKind::flatten || arch.layers[i].kind == LayerKind::linear) {
            head = i;
            break;
        }
    }
    for (std::size_t i = 0; i < head; ++i) {
        const auto& l = arch.layers[i];
        if (l.kind == LayerKind::maxpool) {
            LayerSpec c;
            c.kind = LayerKind::conv;
            c.width = last_width;
            c.kh = l.kh;
            c.kw = l.kw;
            c.stride = l.stride;
            c.padding = l.padding;
            c.name = "pool" + std::to_string(++pools) + "-conv";
            LayerSpec bn;
            bn.kind = LayerKind::batchnorm;
            LayerSpec act;
            act.kind = LayerKind::relu;
            out.layers.push_back(c);
            out.layers.push_back(bn);
            out.layers.push_back(act);
            continue;
        }
        if (l.learnable()) last_width = l.width;
        out.layers.push_back(l);
    }
    if (head < arch.layers.size()) {
        LayerSpec cls;
        cls.kind = LayerKind::classifier_conv;
        cls.width = arch.num_classes;
        cls.name = "classifier";
        out.layers.push_back(cls);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON schema
//
// {
//   "name": "gfcnn",
//   "input_shape": [3, 32, 32],
//   "num_classes": 10,
//   "layers": [
//     {"kind": "conv", "width": 128, "kernel": 8, "stride": 1, "padding": 4, "couple_group": 1},
//     {"kind": "batchnorm"}, {"kind": "relu"},
//     {"kind": "maxpool", "kernel": 4, "stride": 2},
//     {"kind": "flatten"}, {"kind": "linear", "width": 512},
//     {"kind": "linear"}                  // terminal width defaults to num_classes
//   ]
// }
// "kernel" accepts an integer or [kh, kw].
// ---------------------------------------------------------------------------

inline ArchSpec arch_from_json(const nlohmann::json& j) {
    auto field_error = [](const std::string& where, const std::string& what) {
        return ConfigError(where + ": " + what);
    };
    ArchSpec a;
    try {
        a.name = j.value("name", std::string{});
        if (!j.contains("input_shape")) throw field_error("arch", "missing field 'input_shape'");
        a.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
        if (!j.contains("num_classes")) throw field_error("arch", "missing field 'num_classes'");
        a.num_classes = j.at("num_classes").get<std::size_t>();
        if (!j.contains("layers") || !j.at("layers").is_array()) throw field_error("arch", "'layers' must be an array");
        const auto& layers = j.at("layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& lj = layers[i];
            const std::string where = "arch.layers[" + std::to_string(i) + "]";
            if (!lj.contains("kind")) throw field_error(where, "missing field 'kind'");
            LayerSpec l;
            try {
                l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
            } catch (const ConfigError& e) {
                throw field_error(where + ".kind", e.what());
            }
            l.name = lj.value("name", std::string{});
            if (lj.contains("width")) {
                const auto w = lj.at("width").get<long long>();
                if (w < 1) throw field_error(where + ".width", "must be >= 1");
                l.width = static_cast<std::size_t>(w);
            } else if (l.learnable()) {
                if (i + 1 != layers.size()) throw field_error(where, "missing field 'width'");
                l.width = a.num_classes;
            }
            if (lj.contains("kernel")) {
                const auto& k = lj.at("kernel");
                if (k.is_array()) {
                    if (k.size() != 2) throw field_error(where + ".kernel", "expected [kh, kw]");
                    l.kh = k[0].get<std::size_t>();
                    l.kw = k[1].get<std::size_t>();
                } else {
                    l.kh = l.kw = k.get<std::size_t>();
                }
            } else if (l.kind == LayerKind::maxpool) {
                throw field_error(where, "missing field 'kernel'");
            }
            l.stride = lj.value("stride", l.kind == LayerKind::maxpool ? l.kh : std::size_t{1});
            l.padding = lj.value("padding", std::size_t{0});
            if (lj.contains("couple_group") && !lj.at("couple_group").is_null())
                l.couple_group = lj.at("couple_group").get<int>();
            a.layers.push_back(l);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("arch: ") + e.what());
    }
    return a;
}

inline nlohmann::json arch_to_json(const ArchSpec& a) {
    nlohmann::json j;
    j["name"] = a.name;
    j["input_shape"] = a.input_shape;
    j["num_classes"] = a.num_classes;
    auto layers = nlohmann::json::array();
    for (const auto& l : a.layers) {
        nlohmann::json lj;
        lj["kind"] = to_string(l.kind);
        if (!l.name.empty()) lj["name"] = l.name;
        if (l.learnable()) lj["width"] = l.width;
        if (l.kind == LayerKind::conv || l.kind == LayerKind::maxpool) {
            if (l.kh == l.kw) lj["kernel"] = l.kh;
            else lj["kernel"] = {l.kh, l.kw};
            lj["stride"] = l.stride;
            lj["padding"] = l.padding;
        }
        if (l.couple_group) lj["couple_group"] = *l.couple_group;
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j;
}

inline ArchSpec load_arch(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open architecture file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return arch_from_json(j);
}

/// Same layer sequence with every expandable layer set to `width`.
inline ArchSpec with_uniform_width(ArchSpec a, std::size_t width) {
    for (auto i : a.expandable_layers()) a.layers[i].width = width;
    return a;
}

} // namespace widen
