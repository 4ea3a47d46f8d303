#pragma once

// Layered feed-forward models with prefix/suffix composition. Layers are a
// closed set: Dense, Conv2D, ReLU, FrozenNorm (affine with frozen statistics)
// and Flatten. Networks are evaluated single-threaded; editing operates on a
// private clone.

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "editlab/data.hpp"
#include "editlab/rng.hpp"
#include "editlab/sgd.hpp"
#include "editlab/tensor.hpp"

namespace editlab {

struct DenseLayer {
    TensorPtr weight;  // [out, in]
    TensorPtr bias;    // [out]
};

struct Conv2DLayer {
    TensorPtr weight;  // [C_out, C_in, K, K]
    TensorPtr bias;    // [C_out]
    int stride = 1;
    int pad = 0;
};

struct ReluLayer {};

struct FlattenLayer {};

// Statistics (mean, var) are constants: no editing or training operation may
// touch them. gamma/beta are ordinary trainable parameters.
struct FrozenNormLayer {
    TensorPtr gamma;
    TensorPtr beta;
    std::vector<double> mean;
    std::vector<double> var;
};

using Layer = std::variant<DenseLayer, Conv2DLayer, ReluLayer, FrozenNormLayer, FlattenLayer>;

inline bool is_edit_target(const Layer& l) {
    return std::holds_alternative<DenseLayer>(l) || std::holds_alternative<Conv2DLayer>(l);
}

inline bool is_parameterized(const Layer& l) {
    return is_edit_target(l) || std::holds_alternative<FrozenNormLayer>(l);
}

class Network {
public:
    std::string arch_id;  // registry key, e.g. "cnn-small/c6"
    std::vector<Layer> layers;
    std::vector<int> input_shape;

    int layer_count() const { return static_cast<int>(layers.size()); }

    // Indices of Dense/Conv2D layers: the editing targets, in network order.
    std::vector<int> editable_indices() const {
        std::vector<int> out;
        for (int i = 0; i < layer_count(); ++i)
            if (is_edit_target(layers[i])) out.push_back(i);
        return out;
    }

    // Deep copy; parameter tensors are duplicated, stats copied.
    Network clone() const {
        Network c;
        c.arch_id = arch_id;
        c.input_shape = input_shape;
        c.layers.reserve(layers.size());
        for (const auto& l : layers) {
            if (auto* d = std::get_if<DenseLayer>(&l)) {
                c.layers.push_back(DenseLayer{clone_detached(d->weight), clone_detached(d->bias)});
            } else if (auto* cv = std::get_if<Conv2DLayer>(&l)) {
                c.layers.push_back(Conv2DLayer{clone_detached(cv->weight), clone_detached(cv->bias),
                                               cv->stride, cv->pad});
            } else if (auto* fn = std::get_if<FrozenNormLayer>(&l)) {
                c.layers.push_back(FrozenNormLayer{clone_detached(fn->gamma),
                                                   clone_detached(fn->beta), fn->mean, fn->var});
            } else if (std::holds_alternative<ReluLayer>(l)) {
                c.layers.push_back(ReluLayer{});
            } else {
                c.layers.push_back(FlattenLayer{});
            }
        }
        return c;
    }

    TensorPtr apply_layer(int i, const TensorPtr& x) const {
        const Layer& l = layers[i];
        if (auto* d = std::get_if<DenseLayer>(&l)) return affine(d->weight, x, d->bias);
        if (auto* cv = std::get_if<Conv2DLayer>(&l))
            return add_channel_bias(conv2d(x, cv->weight, cv->stride, cv->pad), cv->bias);
        if (auto* fn = std::get_if<FrozenNormLayer>(&l))
            return frozen_norm(x, fn->gamma, fn->beta, fn->mean, fn->var);
        if (std::holds_alternative<ReluLayer>(l)) return relu(x);
        return flatten(x);
    }
};

// f_{<=l}: composition of the first l layers; l = 0 returns x unchanged.
inline TensorPtr forward_prefix(const Network& net, int l, const TensorPtr& x) {
    if (l < 0 || l > net.layer_count())
        throw ContractError("forward_prefix: l=" + std::to_string(l) + " out of [0," +
                            std::to_string(net.layer_count()) + "]");
    TensorPtr h = x;
    for (int i = 0; i < l; ++i) h = net.apply_layer(i, h);
    return h;
}

// f_{>l}: composition of the last L-l layers; l = L is the identity.
inline TensorPtr forward_suffix(const Network& net, int l, const TensorPtr& h) {
    if (l < 0 || l > net.layer_count())
        throw ContractError("forward_suffix: l=" + std::to_string(l) + " out of [0," +
                            std::to_string(net.layer_count()) + "]");
    TensorPtr out = h;
    for (int i = l; i < net.layer_count(); ++i) out = net.apply_layer(i, out);
    return out;
}

inline TensorPtr forward(const Network& net, const TensorPtr& x) {
    return forward_prefix(net, net.layer_count(), x);
}

// argmax with deterministic lowest-index tie-break
inline int predict(const Network& net, const TensorPtr& x) {
    NoGradGuard ng;
    auto logits = forward(net, x);
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits->numel()); ++i)
        if (logits->data[i] > logits->data[best]) best = i;
    return best;
}

// Fraction of samples whose argmax logit equals the label.
inline double accuracy(const Network& net, const LabeledDataset& data) {
    if (data.empty()) throw ContractError("accuracy: dataset is empty");
    NoGradGuard ng;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (predict(net, data.images[i]) == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Parameter groups for layers in [first, last), canonical order and names
// "layers.<i>.weight" / "layers.<i>.bias" (FrozenNorm gamma/beta map to
// weight/bias, matching the decay-by-name convention).
inline std::vector<ParamGroup> collect_params(Network& net, int first, int last) {
    std::vector<ParamGroup> out;
    for (int i = first; i < last; ++i) {
        const std::string base = "layers." + std::to_string(i) + ".";
        Layer& l = net.layers[i];
        if (auto* d = std::get_if<DenseLayer>(&l)) {
            out.emplace_back(base + "weight", d->weight);
            out.emplace_back(base + "bias", d->bias);
        } else if (auto* cv = std::get_if<Conv2DLayer>(&l)) {
            out.emplace_back(base + "weight", cv->weight);
            out.emplace_back(base + "bias", cv->bias);
        } else if (auto* fn = std::get_if<FrozenNormLayer>(&l)) {
            out.emplace_back(base + "weight", fn->gamma);
            out.emplace_back(base + "bias", fn->beta);
        }
    }
    return out;
}

inline std::vector<ParamGroup> collect_params(Network& net) {
    return collect_params(net, 0, net.layer_count());
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

namespace detail {

inline TensorPtr he_init(std::vector<int> shape, int fan_in, Rng& rng) {
    return randn_tensor(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

inline DenseLayer make_dense(int in, int out, Rng& rng) {
    return DenseLayer{detail::he_init({out, in}, in, rng), make_tensor({out})};
}

inline Conv2DLayer make_conv(int cin, int cout, int k, int stride, int pad, Rng& rng) {
    return Conv2DLayer{detail::he_init({cout, cin, k, k}, cin * k * k, rng), make_tensor({cout}),
                       stride, pad};
}

inline FrozenNormLayer make_norm(int c) {
    return FrozenNormLayer{full_like_shape({c}, 1.0), make_tensor({c}),
                           std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)};
}

}  // namespace detail

// mlp-small: Flatten -> 3072 -> 128 -> 64 -> classes, ReLU between.
inline Network build_mlp_small(int classes, std::uint64_t seed, int channels = 3, int hw = 32) {
    Rng rng(derive_seed(seed, "init/mlp-small"));
    Network net;
    net.arch_id = "mlp-small/c" + std::to_string(classes);
    net.input_shape = {channels, hw, hw};
    const int in = channels * hw * hw;
    net.layers.push_back(FlattenLayer{});
    net.layers.push_back(detail::make_dense(in, 128, rng));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(detail::make_dense(128, 64, rng));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(detail::make_dense(64, classes, rng));
    return net;
}

// cnn-small: two 3x3 conv blocks with strided downsampling convs and a dense
// head, over [channels,32,32] inputs. Downsampling uses stride 3 (5x5 pad 0,
// then 3x3 pad 1): odd kernels with exact output-size divisibility rule out
// stride 2 on even feature maps. 32 -> 10 -> 4.
inline Network build_cnn_small(int classes, std::uint64_t seed, int channels = 3, int hw = 32) {
    if (hw != 32) throw ContractError("cnn-small expects 32x32 inputs");
    Rng rng(derive_seed(seed, "init/cnn-small"));
    Network net;
    net.arch_id = "cnn-small/c" + std::to_string(classes);
    net.input_shape = {channels, hw, hw};
    net.layers.push_back(detail::make_conv(channels, 8, 3, 1, 1, rng));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(detail::make_conv(8, 8, 5, 3, 0, rng));  // 32 -> 10
    net.layers.push_back(detail::make_norm(8));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(detail::make_conv(8, 16, 3, 1, 1, rng));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(detail::make_conv(16, 16, 3, 3, 1, rng));  // 10 -> 4
    net.layers.push_back(detail::make_norm(16));
    net.layers.push_back(ReluLayer{});
    net.layers.push_back(FlattenLayer{});
    net.layers.push_back(detail::make_dense(16 * 4 * 4, classes, rng));
    return net;
}

// arch ids look like "cnn-small/c6"; rebuilds the preset with fresh init
inline Network build_preset(const std::string& arch_id, std::uint64_t seed, int channels = 3,
                            int hw = 32) {
    auto slash = arch_id.find("/c");
    if (slash == std::string::npos)
        throw ContractError("build_preset: unknown architecture id '" + arch_id + "'");
    const std::string name = arch_id.substr(0, slash);
    const int classes = std::stoi(arch_id.substr(slash + 2));
    if (name == "mlp-small") return build_mlp_small(classes, seed, channels, hw);
    if (name == "cnn-small") return build_cnn_small(classes, seed, channels, hw);
    throw ContractError("build_preset: unknown architecture id '" + arch_id + "'");
}

}  // namespace editlab
