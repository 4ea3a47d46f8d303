#pragma once

// The editing algorithms: local/global fine-tuning for output collision,
// rewriting (associative-memory low-rank update), direct low-rank editing,
// supervised local/global/full fine-tuning, weight-space interpolation
// sweeps, and 1-layer interpolation.
//
// Editors are pure with respect to their input network (they edit a private
// clone) and deterministic given (net, data, cfg). Every editor returns the
// weights of the epoch with the best editing validation accuracy, never the
// final epoch. Features below the first trainable layer are cached once and
// reused across epochs, since no gradient can reach them.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "editlab/checkpoint.hpp"
#include "editlab/data.hpp"
#include "editlab/linalg.hpp"
#include "editlab/network.hpp"
#include "editlab/rng.hpp"
#include "editlab/sgd.hpp"
#include "editlab/tensor.hpp"

namespace editlab {

struct EditConfig {
    int layer = 0;                  // editable-slot index (into editable_indices)
    double learning_rate = 0.0;
    int max_epochs = 10000;
    double early_stop_ratio = 0.5;  // stop when val acc < ratio * best-so-far
    int rank = 1;
    std::uint64_t seed = 0;
    int batch_size = 0;             // 0 = full batch up to 256 samples, else 64
    bool center_features = false;   // rewriting: use covariance instead of second moment

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ContractError("EditConfig: learning_rate must be >= 0");
        if (max_epochs < 1) throw ContractError("EditConfig: max_epochs must be >= 1");
        if (!(early_stop_ratio >= 0.0 && early_stop_ratio <= 1.0))
            throw ContractError("EditConfig: early_stop_ratio must be in [0,1]");
        if (rank < 1) throw ContractError("EditConfig: rank must be >= 1");
        if (batch_size < 0) throw ContractError("EditConfig: batch_size must be >= 0");
    }

    int effective_batch(int n_samples) const {
        if (batch_size > 0) return batch_size;
        return n_samples <= 256 ? n_samples : 64;
    }
};

struct TracePoint {
    int epoch;
    double train_loss;
    double val_acc;
};

struct EditTrace {
    std::vector<TracePoint> points;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    enum class StopReason { max_epochs, early_stop } stop_reason = StopReason::max_epochs;
};

inline const char* to_string(EditTrace::StopReason r) {
    return r == EditTrace::StopReason::early_stop ? "early_stop" : "max_epochs";
}

// Rank-r factor pair attached to one layer: the applied update is U * V^T
// (for Conv2D, placed at the kernel center, i.e. a 1x1 convolution).
struct LowRankUpdate {
    int layer = 0;  // network layer index of the edited Dense/Conv2D
    TensorPtr u;    // [n_l, r]
    TensorPtr v;    // [n_{l-1}, r]
};

struct EditResult {
    Network net;
    EditTrace trace;
};

struct LowRankEditResult {
    Network net;
    EditTrace trace;
    LowRankUpdate update;
};

// Supervised editing data: (x, y) pairs with a validation split.
struct SupervisedEditData {
    LabeledDataset train;
    LabeledDataset val;
};

// ---------------------------------------------------------------------------
// early stopping (Appendix-style: terminate when validation accuracy drops
// below ratio * best-so-far, never before the first measurement)
// ---------------------------------------------------------------------------

class EarlyStopMonitor {
public:
    explicit EarlyStopMonitor(double ratio) : ratio_(ratio) {}

    // feed one measurement; true means stop at this observation
    bool observe(double val_acc) {
        const bool stop = measured_ && val_acc < ratio_ * best_;
        measured_ = true;
        best_ = std::max(best_, val_acc);
        return stop;
    }

private:
    double ratio_;
    double best_ = 0.0;
    bool measured_ = false;
};

// ---------------------------------------------------------------------------
// internal machinery
// ---------------------------------------------------------------------------

namespace editdetail {

inline int resolve_target(const Network& net, int slot) {
    const auto idx = net.editable_indices();
    if (slot < 0 || slot >= static_cast<int>(idx.size()))
        throw ContractError("edit: layer slot " + std::to_string(slot) + " out of range [0," +
                            std::to_string(idx.size()) + ")");
    return idx[slot];
}

// Collision features f_<=l are taken after the run of non-target layers
// (ReLU / FrozenNorm / Flatten) that follows the edited Dense/Conv2D.
inline int collision_cut(const Network& net, int target) {
    int c = target + 1;
    while (c < net.layer_count() && !is_edit_target(net.layers[c])) ++c;
    return c;
}

inline TensorPtr forward_range(const Network& net, int from, int to, TensorPtr h) {
    for (int i = from; i < to; ++i) h = net.apply_layer(i, h);
    return h;
}

inline std::vector<TensorPtr> cache_prefix(const Network& net, const std::vector<TensorPtr>& xs,
                                           int boundary) {
    NoGradGuard ng;
    std::vector<TensorPtr> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(forward_range(net, 0, boundary, x));
    return out;
}

struct Snapshot {
    std::vector<std::vector<double>> values;

    void take(const std::vector<ParamGroup>& params) {
        values.clear();
        values.reserve(params.size());
        for (const auto& p : params) values.push_back(p.tensor->data);
    }

    void restore(std::vector<ParamGroup>& params) const {
        for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->data = values[i];
    }
};

struct LoopHooks {
    // forward (+ backward when stepping) over the given sample indices;
    // returns mean per-sample loss over the batch
    std::function<double(const std::vector<int>&, bool)> batch;
    std::function<double()> val_acc;
    // invoked after parameters change and before val_acc (e.g. low-rank
    // materialization into the evaluation copy); may be empty
    std::function<void()> sync;
};

// Shared SGD loop: epoch 0 records the initial state; each later epoch
// shuffles (when mini-batching), steps, records (epoch, train loss, val acc),
// tracks the best epoch and applies early stopping and the divergence guard.
// Parameters end up holding the best-epoch values.
inline EditTrace run_edit_loop(std::vector<ParamGroup>& params, const SgdConfig& sgd, int n_samples,
                               const EditConfig& cfg, const LoopHooks& hooks) {
    EditTrace trace;
    std::vector<int> all(n_samples);
    for (int i = 0; i < n_samples; ++i) all[i] = i;

    if (hooks.sync) hooks.sync();
    double loss0;
    {
        NoGradGuard ng;
        loss0 = hooks.batch(all, false);
    }
    const double acc0 = hooks.val_acc();
    trace.points.push_back({0, loss0, acc0});
    trace.best_epoch = 0;
    trace.best_val_acc = acc0;
    Snapshot best;
    best.take(params);

    EarlyStopMonitor stop(cfg.early_stop_ratio);
    stop.observe(acc0);
    const double guard = loss0 > 0.0 ? 1e6 * loss0 : std::numeric_limits<double>::infinity();

    const int B = cfg.effective_batch(n_samples);
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<int> order = all;
    trace.stop_reason = EditTrace::StopReason::max_epochs;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (B < n_samples) shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n_samples; start += B) {
            std::vector<int> batch(order.begin() + start,
                                   order.begin() + std::min(n_samples, start + B));
            zero_grads(params);
            epoch_loss += hooks.batch(batch, true) * static_cast<double>(batch.size());
            sgd_step(params, sgd);
        }
        epoch_loss /= static_cast<double>(n_samples);
        if (!std::isfinite(epoch_loss) || epoch_loss > guard)
            throw DivergenceError("edit diverged at epoch " + std::to_string(epoch) +
                                  ": loss=" + std::to_string(epoch_loss) +
                                  " (initial " + std::to_string(loss0) + ")");
        if (hooks.sync) hooks.sync();
        const double acc = hooks.val_acc();
        trace.points.push_back({epoch, epoch_loss, acc});
        if (acc > trace.best_val_acc) {
            trace.best_val_acc = acc;
            trace.best_epoch = epoch;
            best.take(params);
        }
        if (stop.observe(acc)) {
            trace.stop_reason = EditTrace::StopReason::early_stop;
            break;
        }
    }
    best.restore(params);
    return trace;
}

// per-pair collision loss builder: (1/n_l) * || f(a) - f(b) ||^2
inline TensorPtr collision_loss(const Network& net, int from, int to, const TensorPtr& ha,
                                const TensorPtr& hb, double inv_nl) {
    auto fa = forward_range(net, from, to, ha);
    auto fb = forward_range(net, from, to, hb);
    return scale(sum_squares(sub(fa, fb)), inv_nl);
}

// Validation accuracy from cached boundary features: forward [boundary, L).
inline double val_accuracy_from(const Network& net, int boundary,
                                const std::vector<TensorPtr>& feats,
                                const std::vector<int>& labels) {
    if (feats.empty()) throw ContractError("edit: validation set is empty");
    NoGradGuard ng;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        auto logits = forward_range(net, boundary, net.layer_count(), feats[i]);
        int bestc = 0;
        for (int c = 1; c < static_cast<int>(logits->numel()); ++c)
            if (logits->data[c] > logits->data[bestc]) bestc = c;
        if (bestc == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(feats.size());
}

// feature width at the collision cut, measured on one sample
inline double inv_feature_count(const Network& net, int boundary, int cut, const TensorPtr& h0) {
    NoGradGuard ng;
    auto f = forward_range(net, boundary, cut, h0);
    return 1.0 / static_cast<double>(f->numel());
}

inline SgdConfig protocol_sgd(double lr) { return SgdConfig{lr, 0.9, 1e-4}; }

// Collision fine-tuning shared by the local and global variants: trainable
// layers are [scope_first, scope_last); features are cached below `boundary`.
inline EditResult collision_ft(const Network& net, const EditDataset& pairs, const EditConfig& cfg,
                               int scope_first, int scope_last, int boundary, int cut) {
    if (pairs.train.empty()) throw ContractError("edit: training pairs are empty");
    if (pairs.val.empty()) throw ContractError("edit: validation pairs are empty");
    Network work = net.clone();
    auto params = collect_params(work, scope_first, scope_last);

    std::vector<TensorPtr> xs, xps;
    for (const auto& t : pairs.train) {
        xs.push_back(t.x);
        xps.push_back(t.x_prime);
    }
    const auto ha = cache_prefix(work, xs, boundary);
    const auto hb = cache_prefix(work, xps, boundary);
    const double inv_nl = inv_feature_count(work, boundary, cut, ha[0]);

    auto val_labeled = pairs.val_as_labeled();
    const auto val_feats = cache_prefix(work, val_labeled.images, boundary);

    LoopHooks hooks;
    hooks.batch = [&](const std::vector<int>& idx, bool step) {
        double total = 0.0;
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (int i : idx) {
            auto loss = collision_loss(work, boundary, cut, ha[i], hb[i], inv_nl);
            total += loss->data[0];
            if (step) backward(scale(loss, inv_b));
        }
        return total * inv_b;
    };
    hooks.val_acc = [&] { return val_accuracy_from(work, boundary, val_feats, val_labeled.labels); };

    auto trace = run_edit_loop(params, protocol_sgd(cfg.learning_rate),
                               static_cast<int>(pairs.train.size()), cfg, hooks);
    return {std::move(work), std::move(trace)};
}

// Supervised fine-tuning shared by local / global-forward / full variants.
inline EditResult supervised_ft(const Network& net, const SupervisedEditData& data,
                                const EditConfig& cfg, int scope_first, int scope_last,
                                int boundary) {
    if (data.train.empty()) throw ContractError("edit: training set is empty");
    if (data.val.empty()) throw ContractError("edit: validation set is empty");
    Network work = net.clone();
    auto params = collect_params(work, scope_first, scope_last);

    const auto feats = cache_prefix(work, data.train.images, boundary);
    const auto val_feats = cache_prefix(work, data.val.images, boundary);
    const int L = work.layer_count();

    LoopHooks hooks;
    hooks.batch = [&](const std::vector<int>& idx, bool step) {
        double total = 0.0;
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (int i : idx) {
            auto logits = forward_range(work, boundary, L, feats[i]);
            auto loss = cross_entropy_logits(logits, data.train.labels[i]);
            total += loss->data[0];
            if (step) backward(scale(loss, inv_b));
        }
        return total * inv_b;
    };
    hooks.val_acc = [&] { return val_accuracy_from(work, boundary, val_feats, data.val.labels); };

    auto trace = run_edit_loop(params, protocol_sgd(cfg.learning_rate),
                               static_cast<int>(data.train.size()), cfg, hooks);
    return {std::move(work), std::move(trace)};
}

// writes W + U V^T into the target layer's weight (kernel center for conv)
inline void materialize_lowrank(Network& net, int target, const std::vector<double>& base_weight,
                                const Tensor& u, const Tensor& v) {
    const int r = u.shape[1];
    if (auto* d = std::get_if<DenseLayer>(&net.layers[target])) {
        const int m = d->weight->shape[0], n = d->weight->shape[1];
        d->weight->data = base_weight;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < r; ++k)
                    acc += u.data[static_cast<std::size_t>(i) * r + k] *
                           v.data[static_cast<std::size_t>(j) * r + k];
                d->weight->data[static_cast<std::size_t>(i) * n + j] += acc;
            }
    } else if (auto* cv = std::get_if<Conv2DLayer>(&net.layers[target])) {
        const int co = cv->weight->shape[0], ci = cv->weight->shape[1], K = cv->weight->shape[2];
        const int center = (K / 2) * K + (K / 2);
        cv->weight->data = base_weight;
        for (int o = 0; o < co; ++o)
            for (int c = 0; c < ci; ++c) {
                double acc = 0.0;
                for (int k = 0; k < r; ++k)
                    acc += u.data[static_cast<std::size_t>(o) * r + k] *
                           v.data[static_cast<std::size_t>(c) * r + k];
                cv->weight->data[(static_cast<std::size_t>(o) * ci + c) * K * K + center] += acc;
            }
    } else {
        throw ContractError("materialize_lowrank: layer is not Dense/Conv2D");
    }
}

struct TargetDims {
    int n_out, n_in;       // rows of U, rows of V
    bool conv;
    int stride = 1, offset = 0, out_h = 0, out_w = 0;
};

inline TargetDims target_dims(const Network& net, int target, const TensorPtr& feat0) {
    TargetDims d{};
    if (auto* dn = std::get_if<DenseLayer>(&net.layers[target])) {
        d.n_out = dn->weight->shape[0];
        d.n_in = dn->weight->shape[1];
        d.conv = false;
    } else if (auto* cv = std::get_if<Conv2DLayer>(&net.layers[target])) {
        d.n_out = cv->weight->shape[0];
        d.n_in = cv->weight->shape[1];
        d.conv = true;
        const int K = cv->weight->shape[2];
        d.stride = cv->stride;
        d.offset = (K - 1) / 2 - cv->pad;
        if (d.offset < 0)
            throw ContractError("low-rank edit: pad exceeds (K-1)/2 at the target layer");
        NoGradGuard ng;
        auto base = net.apply_layer(target, feat0);
        d.out_h = base->shape[1];
        d.out_w = base->shape[2];
    } else {
        throw ContractError("low-rank edit: target layer is not Dense/Conv2D");
    }
    return d;
}

// low-rank path on cached features: U (V^T h), as chained 1x1 convolutions
// for conv layers (the second stage samples the base conv's output grid)
inline TensorPtr lowrank_path(const TargetDims& d, const TensorPtr& h, const TensorPtr& u,
                              const TensorPtr& v) {
    if (!d.conv) return matvec(u, matvec_t(v, h));
    auto z = channel_linear(h, v, 1, 0, /*transposed=*/true);
    return channel_linear(z, u, d.stride, d.offset, /*transposed=*/false, d.out_h, d.out_w);
}

struct LowRankProblem {
    Network work;
    int target, cut;
    TargetDims dims;
    std::vector<double> base_weight;
    // cached constants
    std::vector<TensorPtr> base_a, base_b;  // layer output on f_{<t}(x), f_{<t}(x')
    std::vector<TensorPtr> feat_a, feat_b;  // f_{<t}(x), f_{<t}(x')
    std::vector<TensorPtr> val_feats;
    std::vector<int> val_labels;
    double inv_nl = 0.0;
};

inline LowRankProblem prepare_lowrank(const Network& net, const EditDataset& pairs,
                                      const EditConfig& cfg) {
    if (pairs.train.empty()) throw ContractError("edit: training pairs are empty");
    if (pairs.val.empty()) throw ContractError("edit: validation pairs are empty");
    LowRankProblem p;
    p.work = net.clone();
    p.target = resolve_target(p.work, cfg.layer);
    p.cut = collision_cut(p.work, p.target);

    std::vector<TensorPtr> xs, xps;
    for (const auto& t : pairs.train) {
        xs.push_back(t.x);
        xps.push_back(t.x_prime);
    }
    p.feat_a = cache_prefix(p.work, xs, p.target);
    p.feat_b = cache_prefix(p.work, xps, p.target);
    p.dims = target_dims(p.work, p.target, p.feat_a[0]);
    if (cfg.rank > std::min(p.dims.n_out, p.dims.n_in))
        throw ContractError("edit: rank " + std::to_string(cfg.rank) + " exceeds min(" +
                            std::to_string(p.dims.n_out) + "," + std::to_string(p.dims.n_in) + ")");
    {
        NoGradGuard ng;
        for (const auto& h : p.feat_a) p.base_a.push_back(p.work.apply_layer(p.target, h));
        for (const auto& h : p.feat_b) p.base_b.push_back(p.work.apply_layer(p.target, h));
    }
    if (auto* dn = std::get_if<DenseLayer>(&p.work.layers[p.target]))
        p.base_weight = dn->weight->data;
    else
        p.base_weight = std::get<Conv2DLayer>(p.work.layers[p.target]).weight->data;

    auto val_labeled = pairs.val_as_labeled();
    p.val_feats = cache_prefix(p.work, val_labeled.images, p.target);
    p.val_labels = val_labeled.labels;
    p.inv_nl = inv_feature_count(p.work, p.target, p.cut, p.feat_a[0]);
    return p;
}

// collision loss of the perturbed layer on cached features for pair i
inline TensorPtr lowrank_pair_loss(LowRankProblem& p, int i, const TensorPtr& u,
                                   const TensorPtr& v) {
    auto ya = add(p.base_a[i], lowrank_path(p.dims, p.feat_a[i], u, v));
    auto yb = add(p.base_b[i], lowrank_path(p.dims, p.feat_b[i], u, v));
    auto fa = forward_range(p.work, p.target + 1, p.cut, ya);
    auto fb = forward_range(p.work, p.target + 1, p.cut, yb);
    return scale(sum_squares(sub(fa, fb)), p.inv_nl);
}

inline LowRankEditResult run_lowrank(LowRankProblem p, const EditConfig& cfg, TensorPtr u,
                                     TensorPtr v, bool train_v, const char* u_name,
                                     const char* v_name) {
    std::vector<ParamGroup> params;
    params.emplace_back(u_name, u);
    if (train_v) params.emplace_back(v_name, v);

    LoopHooks hooks;
    hooks.batch = [&](const std::vector<int>& idx, bool step) {
        double total = 0.0;
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (int i : idx) {
            auto loss = lowrank_pair_loss(p, i, u, v);
            total += loss->data[0];
            if (step) backward(scale(loss, inv_b));
        }
        return total * inv_b;
    };
    // materialize W + U V^T into the work copy so validation sees the edit
    hooks.sync = [&] { materialize_lowrank(p.work, p.target, p.base_weight, *u, *v); };
    hooks.val_acc = [&] {
        return val_accuracy_from(p.work, p.target, p.val_feats, p.val_labels);
    };

    auto trace = run_edit_loop(params, protocol_sgd(cfg.learning_rate),
                               static_cast<int>(p.feat_a.size()), cfg, hooks);
    materialize_lowrank(p.work, p.target, p.base_weight, *u, *v);
    return {std::move(p.work), std::move(trace), LowRankUpdate{p.target, u, v}};
}

}  // namespace editdetail

// ---------------------------------------------------------------------------
// editors
// ---------------------------------------------------------------------------

// Optimize W_l (weight and bias of the target layer) so that features at the
// collision cut agree between x and x'.
inline EditResult edit_local_ft_collision(const Network& net, const EditDataset& pairs,
                                          const EditConfig& cfg) {
    cfg.validate();
    const int t = editdetail::resolve_target(net, cfg.layer);
    const int cut = editdetail::collision_cut(net, t);
    return editdetail::collision_ft(net, pairs, cfg, t, t + 1, t, cut);
}

// Optimize every parameter from the input up to the collision cut.
inline EditResult edit_global_ft_collision(const Network& net, const EditDataset& pairs,
                                           const EditConfig& cfg) {
    cfg.validate();
    const int t = editdetail::resolve_target(net, cfg.layer);
    const int cut = editdetail::collision_cut(net, t);
    return editdetail::collision_ft(net, pairs, cfg, 0, cut, 0, cut);
}

// Supervised fine-tuning of the target layer only (cross-entropy on labels).
inline EditResult edit_local_ft_supervised(const Network& net, const SupervisedEditData& data,
                                           const EditConfig& cfg) {
    cfg.validate();
    const int t = editdetail::resolve_target(net, cfg.layer);
    return editdetail::supervised_ft(net, data, cfg, t, t + 1, t);
}

// Supervised fine-tuning of layers l..L.
inline EditResult edit_global_ft_forward(const Network& net, const SupervisedEditData& data,
                                         const EditConfig& cfg) {
    cfg.validate();
    const int t = editdetail::resolve_target(net, cfg.layer);
    return editdetail::supervised_ft(net, data, cfg, t, net.layer_count(), t);
}

// Full-model fine-tuning: every parameterized layer (FrozenNorm statistics
// stay frozen, as always).
inline EditResult edit_full_ft(const Network& net, const SupervisedEditData& data,
                               const EditConfig& cfg) {
    cfg.validate();
    EditConfig c = cfg;
    c.layer = 0;
    const int t = editdetail::resolve_target(net, 0);
    return editdetail::supervised_ft(net, data, c, t, net.layer_count(), t);
}

// Direct low-rank editing: random small (U, V), all base weights frozen, SGD
// on the factors against the collision objective on cached features.
inline LowRankEditResult edit_direct_lowrank(const Network& net, const EditDataset& pairs,
                                             const EditConfig& cfg) {
    cfg.validate();
    auto p = editdetail::prepare_lowrank(net, pairs, cfg);
    Rng ur(derive_seed(cfg.seed, "lowrank/u"));
    Rng vr(derive_seed(cfg.seed, "lowrank/v"));
    auto u = leaf_param(randn_tensor({p.dims.n_out, cfg.rank}, ur, 1e-3));
    auto v = leaf_param(randn_tensor({p.dims.n_in, cfg.rank}, vr, 1e-3));
    return editdetail::run_lowrank(std::move(p), cfg, u, v, /*train_v=*/true, "edit.u", "edit.v");
}

// Rewriting: V is derived from the feature second-moment matrix by a
// least-squares solve against the mean edited-feature key (ZCA-style
// whitening without explicit inversion), then fixed; U is optimized by SGD.
inline LowRankEditResult edit_rewrite(const Network& net, const EditDataset& pairs,
                                      const std::vector<TensorPtr>& feature_source,
                                      const EditConfig& cfg) {
    cfg.validate();
    if (feature_source.empty()) throw ContractError("edit_rewrite: feature_source is empty");
    auto p = editdetail::prepare_lowrank(net, pairs, cfg);
    const int n = p.dims.n_in;

    // channel vectors of f_{<t} over the feature source (all spatial positions for conv)
    auto channel_vectors = [&](const std::vector<TensorPtr>& feats, std::vector<double>& sum,
                               std::vector<double>* second_moment) {
        std::size_t count = 0;
        for (const auto& f : feats) {
            const std::size_t positions = f->data.size() / static_cast<std::size_t>(n);
            for (std::size_t pos = 0; pos < positions; ++pos) {
                // channel-major layout: element (c, pos)
                for (int c = 0; c < n; ++c) {
                    const double hc = f->data[static_cast<std::size_t>(c) * positions + pos];
                    sum[c] += hc;
                    if (second_moment)
                        for (int c2 = 0; c2 <= c; ++c2)
                            (*second_moment)[static_cast<std::size_t>(c) * n + c2] +=
                                hc * f->data[static_cast<std::size_t>(c2) * positions + pos];
                }
                ++count;
            }
        }
        return count;
    };

    const auto src_feats = editdetail::cache_prefix(p.work, feature_source, p.target);
    std::vector<double> src_sum(n, 0.0), sigma(static_cast<std::size_t>(n) * n, 0.0);
    const std::size_t m_src = channel_vectors(src_feats, src_sum, &sigma);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double v = sigma[static_cast<std::size_t>(i) * n + j] / static_cast<double>(m_src);
            if (cfg.center_features)
                v -= (src_sum[i] / m_src) * (src_sum[j] / m_src);
            sigma[static_cast<std::size_t>(i) * n + j] = v;
            sigma[static_cast<std::size_t>(j) * n + i] = v;
        }

    // key directions: mean edited feature per round-robin pair group
    const int r = cfg.rank;
    std::vector<std::vector<double>> keys(r, std::vector<double>(n, 0.0));
    std::vector<std::size_t> key_counts(r, 0);
    for (std::size_t i = 0; i < p.feat_b.size(); ++i) {
        const auto& f = p.feat_b[i];
        const std::size_t positions = f->data.size() / static_cast<std::size_t>(n);
        auto& key = keys[i % r];
        for (int c = 0; c < n; ++c)
            for (std::size_t pos = 0; pos < positions; ++pos)
                key[c] += f->data[static_cast<std::size_t>(c) * positions + pos];
        key_counts[i % r] += positions;
    }
    std::vector<std::vector<double>> dirs;
    for (int g = 0; g < r; ++g) {
        if (key_counts[g] == 0) throw ContractError("edit_rewrite: fewer pairs than rank");
        for (int c = 0; c < n; ++c) {
            keys[g][c] /= static_cast<double>(key_counts[g]);
            if (cfg.center_features) keys[g][c] -= src_sum[c] / static_cast<double>(m_src);
        }
        if (vec_norm(keys[g]) == 0.0) throw ContractError("edit_rewrite: zero key vector");
        dirs.push_back(least_squares_sym(sigma, n, keys[g]));
    }
    auto ortho = gram_schmidt(std::move(dirs));
    if (static_cast<int>(ortho.size()) < r)
        throw ContractError("edit_rewrite: key directions are not independent at rank " +
                            std::to_string(r));

    auto v = make_tensor({n, r});
    for (int c = 0; c < n; ++c)
        for (int k = 0; k < r; ++k) v->data[static_cast<std::size_t>(c) * r + k] = ortho[k][c];

    Rng ur(derive_seed(cfg.seed, "rewrite/u"));
    auto u = leaf_param(randn_tensor({p.dims.n_out, r}, ur, 1e-3));
    return editdetail::run_lowrank(std::move(p), cfg, u, v, /*train_v=*/false, "edit.u", "edit.v");
}

// ---------------------------------------------------------------------------
// interpolation
// ---------------------------------------------------------------------------

struct EvalSet {
    std::string name;
    LabeledDataset data;
};

struct CurveRow {
    double alpha;
    std::string eval_name;
    double accuracy;
};

using CurveTable = std::vector<CurveRow>;

// Instantiates (1-alpha) W + alpha W' for every alpha and records accuracy on
// every eval set. `proto` supplies the architecture the checkpoints restore
// into. alphas must be sorted and include 0 and 1.
inline CurveTable interpolation_sweep(const Network& proto, const Checkpoint& orig,
                                      const Checkpoint& edited, const std::vector<double>& alphas,
                                      const std::vector<EvalSet>& evals) {
    if (!orig.same_layout(edited)) throw ContractError("interpolation_sweep: layout mismatch");
    if (alphas.empty() || !std::is_sorted(alphas.begin(), alphas.end()))
        throw ContractError("interpolation_sweep: alphas must be sorted");
    if (alphas.front() != 0.0 || alphas.back() != 1.0)
        throw ContractError("interpolation_sweep: alphas must include 0 and 1");
    CurveTable rows;
    Network scratch = proto.clone();
    for (double a : alphas) {
        restore(scratch, interpolate(orig, edited, a));
        for (const auto& ev : evals)
            rows.push_back({a, ev.name, accuracy(scratch, ev.data)});
    }
    return rows;
}

// 1-LI: local supervised fine-tuning at one layer, then a weight-space
// interpolation sweep between the original and edited checkpoints.
inline std::pair<CurveTable, EditTrace> one_layer_interpolation(const Network& net,
                                                                const SupervisedEditData& data,
                                                                const EditConfig& cfg,
                                                                const std::vector<double>& alphas,
                                                                const std::vector<EvalSet>& evals) {
    auto edited = edit_local_ft_supervised(net, data, cfg);
    auto curve = interpolation_sweep(net, capture(net), capture(edited.net), alphas, evals);
    return {std::move(curve), std::move(edited.trace)};
}

// ---------------------------------------------------------------------------
// exports
// ---------------------------------------------------------------------------

inline Checkpoint lowrank_to_checkpoint(const LowRankUpdate& upd, const std::string& arch_id) {
    Checkpoint ck;
    ck.arch_id = "lowrank-update/" + arch_id;
    ck.layout.push_back({upd.layer, "u", upd.u->shape, 0, true});
    ck.flat.insert(ck.flat.end(), upd.u->data.begin(), upd.u->data.end());
    ck.layout.push_back({upd.layer, "v", upd.v->shape, ck.flat.size(), true});
    ck.flat.insert(ck.flat.end(), upd.v->data.begin(), upd.v->data.end());
    return ck;
}

}  // namespace editlab
