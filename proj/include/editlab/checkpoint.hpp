#pragma once

// Checkpoints: all trainable parameters of a network flattened into one
// canonical vector (ascending layer index, weight before bias), plus
// FrozenNorm statistics carried as separate non-interpolated buffers.
// Interpolation acts on the flat vector only, so two checkpoints of the same
// trained model interpolate to bit-identical statistics at every alpha.
//
// On disk: "EDLB" magic, version, architecture id, layout table, raw 64-bit
// little-endian values, with a human-readable key=value sidecar at
// "<path>.meta".

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "editlab/io.hpp"
#include "editlab/network.hpp"

namespace editlab {

struct LayoutEntry {
    int layer_index;
    std::string name;        // "weight", "bias", "running_mean", "running_var", "u", "v"
    std::vector<int> shape;
    std::size_t offset;      // into flat (params) or buffers (is_param == false)
    bool is_param;

    bool operator==(const LayoutEntry& o) const {
        return layer_index == o.layer_index && name == o.name && shape == o.shape &&
               offset == o.offset && is_param == o.is_param;
    }
};

struct Checkpoint {
    std::string arch_id;
    std::vector<LayoutEntry> layout;
    std::vector<double> flat;     // trainable parameters
    std::vector<double> buffers;  // frozen statistics

    bool same_layout(const Checkpoint& o) const {
        return arch_id == o.arch_id && layout == o.layout && flat.size() == o.flat.size() &&
               buffers == o.buffers;
    }
};

inline Checkpoint capture(const Network& net) {
    Checkpoint ck;
    ck.arch_id = net.arch_id;
    auto push_param = [&](int li, const std::string& name, const TensorPtr& t) {
        ck.layout.push_back({li, name, t->shape, ck.flat.size(), true});
        ck.flat.insert(ck.flat.end(), t->data.begin(), t->data.end());
    };
    auto push_buffer = [&](int li, const std::string& name, const std::vector<double>& v) {
        ck.layout.push_back({li, name, {static_cast<int>(v.size())}, ck.buffers.size(), false});
        ck.buffers.insert(ck.buffers.end(), v.begin(), v.end());
    };
    for (int i = 0; i < net.layer_count(); ++i) {
        const Layer& l = net.layers[i];
        if (auto* d = std::get_if<DenseLayer>(&l)) {
            push_param(i, "weight", d->weight);
            push_param(i, "bias", d->bias);
        } else if (auto* cv = std::get_if<Conv2DLayer>(&l)) {
            push_param(i, "weight", cv->weight);
            push_param(i, "bias", cv->bias);
        } else if (auto* fn = std::get_if<FrozenNormLayer>(&l)) {
            push_param(i, "weight", fn->gamma);
            push_param(i, "bias", fn->beta);
            push_buffer(i, "running_mean", fn->mean);
            push_buffer(i, "running_var", fn->var);
        }
    }
    return ck;
}

// Writes parameter and buffer values back into `net`. The network must have
// the checkpoint's architecture; every value is restored bit-exactly.
inline void restore(Network& net, const Checkpoint& ck) {
    if (net.arch_id != ck.arch_id)
        throw ContractError("restore: architecture mismatch: net '" + net.arch_id +
                            "' vs checkpoint '" + ck.arch_id + "'");
    Checkpoint cur = capture(net);
    if (!(cur.layout == ck.layout))
        throw ContractError("restore: layout mismatch for '" + ck.arch_id + "'");
    for (const auto& e : ck.layout) {
        Layer& l = net.layers[e.layer_index];
        auto copy_param = [&](TensorPtr& t) {
            std::copy(ck.flat.begin() + static_cast<std::ptrdiff_t>(e.offset),
                      ck.flat.begin() + static_cast<std::ptrdiff_t>(e.offset + t->data.size()),
                      t->data.begin());
        };
        auto copy_buffer = [&](std::vector<double>& v) {
            std::copy(ck.buffers.begin() + static_cast<std::ptrdiff_t>(e.offset),
                      ck.buffers.begin() + static_cast<std::ptrdiff_t>(e.offset + v.size()),
                      v.begin());
        };
        if (auto* d = std::get_if<DenseLayer>(&l)) {
            copy_param(e.name == "weight" ? d->weight : d->bias);
        } else if (auto* cv = std::get_if<Conv2DLayer>(&l)) {
            copy_param(e.name == "weight" ? cv->weight : cv->bias);
        } else if (auto* fn = std::get_if<FrozenNormLayer>(&l)) {
            if (e.name == "weight") copy_param(fn->gamma);
            else if (e.name == "bias") copy_param(fn->beta);
            else if (e.name == "running_mean") copy_buffer(fn->mean);
            else copy_buffer(fn->var);
        }
    }
}

// flat = (1-alpha)*a + alpha*b elementwise; exact at the endpoints. alpha
// outside [0,1] is allowed (extrapolation) but the caller sees it flagged.
inline Checkpoint interpolate(const Checkpoint& a, const Checkpoint& b, double alpha,
                              bool* extrapolated = nullptr) {
    if (!a.same_layout(b)) throw ContractError("interpolate: checkpoint layouts differ");
    if (extrapolated) *extrapolated = (alpha < 0.0 || alpha > 1.0);
    Checkpoint out = a;
    const double w0 = 1.0 - alpha;
    for (std::size_t i = 0; i < out.flat.size(); ++i)
        out.flat[i] = w0 * a.flat[i] + alpha * b.flat[i];
    return out;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck,
                            const std::map<std::string, std::string>& metadata = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("EDLB", 4);
    bin::put_u32(os, kCheckpointVersion);
    bin::put_str(os, ck.arch_id);
    bin::put_u64(os, ck.layout.size());
    for (const auto& e : ck.layout) {
        bin::put_u32(os, static_cast<std::uint32_t>(e.layer_index));
        bin::put_str(os, e.name);
        bin::put_u32(os, e.is_param ? 1u : 0u);
        bin::put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) bin::put_u64(os, static_cast<std::uint64_t>(d));
        bin::put_u64(os, e.offset);
    }
    bin::put_u64(os, ck.flat.size());
    bin::put_u64(os, ck.buffers.size());
    for (double v : ck.flat) bin::put_f64(os, v);
    for (double v : ck.buffers) bin::put_f64(os, v);
    os.close();
    if (!os.good()) throw IoError("write failed: " + path.string());
    if (!metadata.empty()) write_kv(path.string() + ".meta", metadata);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "EDLB")
        throw IoError("not a checkpoint file: " + path.string());
    const std::uint32_t version = bin::get_u32(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.arch_id = bin::get_str(is);
    const std::uint64_t n = bin::get_u64(is);
    ck.layout.resize(n);
    for (auto& e : ck.layout) {
        e.layer_index = static_cast<int>(bin::get_u32(is));
        e.name = bin::get_str(is);
        e.is_param = bin::get_u32(is) != 0;
        const std::uint32_t nd = bin::get_u32(is);
        e.shape.resize(nd);
        for (auto& d : e.shape) d = static_cast<int>(bin::get_u64(is));
        e.offset = static_cast<std::size_t>(bin::get_u64(is));
    }
    ck.flat.resize(bin::get_u64(is));
    ck.buffers.resize(bin::get_u64(is));
    for (auto& v : ck.flat) v = bin::get_f64(is);
    for (auto& v : ck.buffers) v = bin::get_f64(is);
    return ck;
}

}  // namespace editlab
