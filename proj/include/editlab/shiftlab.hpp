#pragma once

// Procedural desk-scale data: a base classification task (distinct shape x
// stripe-texture x palette per class, per-sample jitter), a region-swap
// editing-task generator that replaces the object's texture with a style
// texture, the editing train/val split policy, and a six-family parametric
// corruption suite with five severities per family.
//
// Every generator is a pure function of its seeds; masks are re-derived from
// (generator_seed, sample index) rather than stored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "editlab/checkpoint.hpp"
#include "editlab/data.hpp"
#include "editlab/rng.hpp"
#include "editlab/tensor.hpp"

namespace editlab {

// ---------------------------------------------------------------------------
// base dataset
// ---------------------------------------------------------------------------

struct BaseDataset {
    std::vector<TensorPtr> images;  // [C,H,W] in [0,1]
    std::vector<int> labels;
    int class_count = 0;
    std::uint64_t generator_seed = 0;
    int channels = 3;
    int hw = 32;

    std::size_t size() const { return images.size(); }

    LabeledDataset as_labeled() const { return LabeledDataset{images, labels}; }
};

namespace shapegen {

inline constexpr int kShapeKinds = 12;

// membership of (dx, dy) in shape `kind` of radius r; dy grows downward
inline bool in_shape(int kind, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (kind) {
        case 0: return dx * dx + dy * dy <= r * r;                             // circle
        case 1: return std::max(ax, ay) <= 0.82 * r;                           // square
        case 2: return ax + ay <= 1.15 * r;                                    // diamond
        case 3: return dy >= -0.9 * r && dy <= 0.75 * r && ax <= 0.75 * (dy + 0.9 * r);  // triangle up
        case 4: return dy <= 0.9 * r && dy >= -0.75 * r && ax <= 0.75 * (0.9 * r - dy);  // triangle down
        case 5: {                                                              // ring
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 >= 0.45 * r * r;
        }
        case 6: return (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r);       // plus
        case 7: return std::max(ax, ay) <= 0.95 * r &&
                       (std::abs(dx - dy) <= 0.5 * r || std::abs(dx + dy) <= 0.5 * r);   // saltire
        case 8: return ay <= 0.42 * r && ax <= 1.1 * r;                        // horizontal bar
        case 9: return ax <= 0.42 * r && ay <= 1.1 * r;                        // vertical bar
        case 10: return (std::abs(dx + 0.45 * r) <= 0.3 * r && ay <= r) ||
                        (std::abs(dy - 0.7 * r) <= 0.3 * r && dx >= -0.75 * r && dx <= 0.9 * r);  // L
        default: return (std::abs(dy + 0.7 * r) <= 0.3 * r && ax <= r) ||
                        (ax <= 0.3 * r && ay <= r);                            // T
    }
}

struct Rgb {
    double r, g, b;
};

inline Rgb class_color(int idx) {
    static const Rgb table[] = {
        {0.90, 0.15, 0.15}, {0.15, 0.35, 0.90}, {0.10, 0.75, 0.25}, {0.95, 0.80, 0.10},
        {0.75, 0.15, 0.85}, {0.10, 0.80, 0.80}, {0.95, 0.50, 0.10}, {0.55, 0.30, 0.10},
        {0.90, 0.40, 0.65}, {0.35, 0.90, 0.55}, {0.25, 0.10, 0.60}, {0.70, 0.85, 0.20},
    };
    return table[idx % 12];
}

struct SampleParams {
    double cx, cy, radius, phase, brightness;
};

// first draws of the per-sample stream, in a fixed documented order
inline SampleParams sample_params(std::uint64_t dataset_seed, int index, int hw) {
    Rng rng(derive_seed(dataset_seed, "sample/" + std::to_string(index)));
    SampleParams p;
    p.cx = hw / 2.0 + rng.uniform(-3.5, 3.5);
    p.cy = hw / 2.0 + rng.uniform(-3.5, 3.5);
    p.radius = (hw / 3.2) * rng.uniform(0.72, 1.0);
    p.phase = rng.uniform(0.0, 6.28318530717958648);
    p.brightness = rng.uniform(-0.06, 0.06);
    return p;
}

}  // namespace shapegen

// Distinct per-class pattern: shape kind c, stripe orientation/period keyed
// by c, palette pair (color c, color c+1). Per-sample jitter in position,
// size, stripe phase, brightness, plus light pixel noise.
inline BaseDataset generate_base(std::uint64_t seed, int class_count, int samples_per_class,
                                 int channels = 3, int hw = 32) {
    if (class_count < 2) throw ContractError("generate_base: class_count must be >= 2");
    if (class_count > shapegen::kShapeKinds)
        throw ContractError("generate_base: at most " + std::to_string(shapegen::kShapeKinds) +
                            " classes supported");
    if (samples_per_class < 1) throw ContractError("generate_base: samples_per_class must be >= 1");
    BaseDataset ds;
    ds.class_count = class_count;
    ds.generator_seed = seed;
    ds.channels = channels;
    ds.hw = hw;
    const int n = class_count * samples_per_class;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int label = i % class_count;
        const auto p = shapegen::sample_params(seed, i, hw);
        Rng noise(derive_seed(seed, "noise/" + std::to_string(i)));
        const int kind = label;
        const double angle = 0.61803398875 * 3.14159265358979 * label;  // spread orientations
        const double kx = std::cos(angle), ky = std::sin(angle);
        const double period = 3.5 + (label % 4);
        const auto ca = shapegen::class_color(label);
        const auto cb = shapegen::class_color(label + 1);
        auto img = make_tensor({channels, hw, hw});
        const std::size_t plane = static_cast<std::size_t>(hw) * hw;
        for (int y = 0; y < hw; ++y) {
            for (int x = 0; x < hw; ++x) {
                double rgb[3];
                if (shapegen::in_shape(kind, x - p.cx, y - p.cy, p.radius)) {
                    const double s =
                        std::sin(6.28318530717958648 * (kx * x + ky * y) / period + p.phase);
                    const auto& c = s > 0.0 ? ca : cb;
                    rgb[0] = c.r;
                    rgb[1] = c.g;
                    rgb[2] = c.b;
                } else {
                    rgb[0] = rgb[1] = rgb[2] = 0.62;
                }
                for (int c = 0; c < channels; ++c) {
                    double v = rgb[c % 3] + p.brightness + noise.uniform(-0.02, 0.02);
                    img->data[c * plane + static_cast<std::size_t>(y) * hw + x] =
                        std::clamp(v, 0.0, 1.0);
                }
            }
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

// Object mask of sample i, re-derived from the generator seed.
inline std::vector<unsigned char> region_mask_object(const BaseDataset& ds, int index) {
    const auto p = shapegen::sample_params(ds.generator_seed, index, ds.hw);
    std::vector<unsigned char> mask(static_cast<std::size_t>(ds.hw) * ds.hw, 0);
    for (int y = 0; y < ds.hw; ++y)
        for (int x = 0; x < ds.hw; ++x)
            if (shapegen::in_shape(ds.labels[index], x - p.cx, y - p.cy, p.radius))
                mask[static_cast<std::size_t>(y) * ds.hw + x] = 1;
    return mask;
}

struct RegionSpec {
    enum class Kind { object, center_box } kind = Kind::object;
    double box_frac = 0.5;  // for center_box: side fraction of the image
};

inline std::vector<unsigned char> region_mask(const BaseDataset& ds, int index,
                                              const RegionSpec& region) {
    if (region.kind == RegionSpec::Kind::object) return region_mask_object(ds, index);
    std::vector<unsigned char> mask(static_cast<std::size_t>(ds.hw) * ds.hw, 0);
    const double half = 0.5 * region.box_frac * ds.hw;
    const double c = ds.hw / 2.0;
    for (int y = 0; y < ds.hw; ++y)
        for (int x = 0; x < ds.hw; ++x)
            if (std::abs(x + 0.5 - c) <= half && std::abs(y + 0.5 - c) <= half)
                mask[static_cast<std::size_t>(y) * ds.hw + x] = 1;
    return mask;
}

// ---------------------------------------------------------------------------
// style textures and edit-task generation
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& style_ids() {
    static const std::vector<std::string> ids = {"checker", "dots", "diag", "noise", "solid"};
    return ids;
}

namespace shapegen {

// Pure function of (style, variant, pixel): the same texture is applied to
// every image, like one style image reused across an editing dataset.
inline Rgb style_pixel(const std::string& style, int variant, int y, int x) {
    const int g = 4 + (variant % 4);  // cell size per variant
    const double tint = 0.04 * (variant % 3);
    const Rgb a{0.93 - tint, 0.93, 0.90 + 0.03 * (variant % 2)};
    const Rgb b{0.18, 0.16 + tint, 0.20};
    auto pick = [&](bool first) { return first ? a : b; };
    if (style == "checker") return pick(((x / g) + (y / g)) % 2 == 0);
    if (style == "dots") {
        const double fx = x % (2 * g) - g + 0.5, fy = y % (2 * g) - g + 0.5;
        return pick(fx * fx + fy * fy > g * g * 0.36);
    }
    if (style == "diag") return pick(((x + y + variant) / g) % 2 == 0);
    if (style == "noise") {
        const std::uint64_t h = splitmix64((static_cast<std::uint64_t>(y) << 32) ^
                                           static_cast<std::uint64_t>(x) ^
                                           (static_cast<std::uint64_t>(variant) * 0x9e37ull));
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        return Rgb{0.2 + 0.7 * u, 0.2 + 0.7 * u, 0.22 + 0.68 * u};
    }
    if (style == "solid") return a;
    throw ContractError("unknown style id '" + style + "'");
}

}  // namespace shapegen

// For every pool image, emits one triple per style variant: x' equals x
// outside the region mask and carries the style texture inside it. Images
// with an empty mask are skipped (counted in *skipped); producing no triples
// at all is a contract error.
inline std::vector<EditTriple> generate_edit_task(const BaseDataset& base, const RegionSpec& region,
                                                  const std::string& style, int style_variants,
                                                  int* skipped = nullptr) {
    if (style_variants < 1) throw ContractError("generate_edit_task: style_variants must be >= 1");
    shapegen::style_pixel(style, 0, 0, 0);  // validates the style id
    std::vector<EditTriple> out;
    int skip_count = 0;
    const std::size_t plane = static_cast<std::size_t>(base.hw) * base.hw;
    for (int i = 0; i < static_cast<int>(base.size()); ++i) {
        const auto mask = region_mask(base, i, region);
        if (std::find(mask.begin(), mask.end(), 1) == mask.end()) {
            ++skip_count;
            continue;
        }
        for (int v = 0; v < style_variants; ++v) {
            auto xp = clone_detached(base.images[i]);
            for (int y = 0; y < base.hw; ++y)
                for (int x = 0; x < base.hw; ++x) {
                    if (!mask[static_cast<std::size_t>(y) * base.hw + x]) continue;
                    const auto c = shapegen::style_pixel(style, v, y, x);
                    const double rgb[3] = {c.r, c.g, c.b};
                    for (int ch = 0; ch < base.channels; ++ch)
                        xp->data[ch * plane + static_cast<std::size_t>(y) * base.hw + x] =
                            rgb[ch % 3];
                }
            out.push_back(EditTriple{base.images[i], xp, base.labels[i], v, i});
        }
    }
    if (skipped) *skipped = skip_count;
    if (out.empty()) throw ContractError("generate_edit_task: region produced no triples");
    return out;
}

// ---------------------------------------------------------------------------
// split policy
// ---------------------------------------------------------------------------

struct SplitPolicy {
    int n_train = 10;
    double min_train_ratio = 0.5;  // rho
    int s_train = 1;
    std::uint64_t seed = 0;
};

// Classes with fewer than n_train/rho triples (or fewer than n_train images)
// are excluded entirely. Per eligible class, n_train images are sampled;
// s_train globally-chosen style variants of those images form the train set,
// everything else of the eligible classes goes to validation.
inline std::pair<std::vector<EditTriple>, std::vector<EditTriple>> split_edit_dataset(
    const std::vector<EditTriple>& triples, const SplitPolicy& policy) {
    if (policy.n_train < 1) throw ContractError("split: n_train must be >= 1");
    if (!(policy.min_train_ratio > 0.0 && policy.min_train_ratio <= 1.0))
        throw ContractError("split: min_train_ratio must be in (0,1]");
    if (policy.s_train < 1) throw ContractError("split: s_train must be >= 1");

    std::map<int, std::vector<std::size_t>> by_class;
    std::set<int> variants;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        by_class[triples[i].y].push_back(i);
        variants.insert(triples[i].style_variant);
    }

    std::vector<int> variant_list(variants.begin(), variants.end());
    {
        Rng vr(derive_seed(policy.seed, "variants"));
        vr.shuffle(variant_list);
    }
    std::set<int> train_variants(variant_list.begin(),
                                 variant_list.begin() +
                                     std::min<std::size_t>(policy.s_train, variant_list.size()));

    std::vector<EditTriple> train, val;
    bool any_eligible = false;
    for (const auto& [cls, idxs] : by_class) {
        std::set<int> image_ids;
        for (auto i : idxs) image_ids.insert(triples[i].image_id);
        const double needed = static_cast<double>(policy.n_train) / policy.min_train_ratio;
        if (static_cast<double>(idxs.size()) < needed) continue;
        if (static_cast<int>(image_ids.size()) < policy.n_train) continue;
        any_eligible = true;
        std::vector<int> ids(image_ids.begin(), image_ids.end());
        Rng cr(derive_seed(policy.seed, "class/" + std::to_string(cls)));
        cr.shuffle(ids);
        std::set<int> chosen(ids.begin(), ids.begin() + policy.n_train);
        for (auto i : idxs) {
            const bool to_train = chosen.count(triples[i].image_id) &&
                                  train_variants.count(triples[i].style_variant);
            (to_train ? train : val).push_back(triples[i]);
        }
    }
    if (!any_eligible) throw ContractError("split: no class meets the minimum training ratio");
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// corruption suite
// ---------------------------------------------------------------------------

enum class ShiftFamily { gaussian_noise, impulse_noise, gaussian_blur, contrast, brightness, pixelate };

struct ShiftSpec {
    ShiftFamily family = ShiftFamily::gaussian_noise;
    int severity = 1;  // 1..5
};

inline const std::vector<std::string>& shift_family_names() {
    static const std::vector<std::string> names = {"gaussian_noise", "impulse_noise",
                                                   "gaussian_blur",  "contrast",
                                                   "brightness",     "pixelate"};
    return names;
}

inline std::string to_string(const ShiftSpec& s) {
    return shift_family_names()[static_cast<int>(s.family)] + ":" + std::to_string(s.severity);
}

inline ShiftSpec parse_shift_spec(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ContractError("shift spec must look like 'family:severity': '" + s + "'");
    const std::string fam = s.substr(0, colon);
    const auto& names = shift_family_names();
    auto it = std::find(names.begin(), names.end(), fam);
    if (it == names.end()) throw ContractError("unknown corruption family '" + fam + "'");
    ShiftSpec spec;
    spec.family = static_cast<ShiftFamily>(it - names.begin());
    spec.severity = std::stoi(s.substr(colon + 1));
    if (spec.severity < 1 || spec.severity > 5)
        throw ContractError("severity must be in 1..5: '" + s + "'");
    return spec;
}

namespace corruption {

// fixed severity tables; values chosen so distortion strictly increases
inline constexpr double kGaussianNoiseSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
inline constexpr double kImpulseFraction[5] = {0.01, 0.03, 0.06, 0.10, 0.17};
inline constexpr double kBlurSigma[5] = {0.4, 0.6, 0.9, 1.3, 1.8};
inline constexpr double kContrastScale[5] = {0.75, 0.6, 0.45, 0.3, 0.2};
inline constexpr double kBrightnessShift[5] = {0.08, 0.16, 0.24, 0.32, 0.40};
inline constexpr double kPixelateFactor[5] = {0.8, 0.65, 0.5, 0.4, 0.3};

inline void separable_blur(std::vector<double>& px, int C, int H, int W, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += k[i + radius];
    }
    for (double& v : k) v /= ksum;
    std::vector<double> tmp(px.size());
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        // horizontal, replicate edges
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int d = -radius; d <= radius; ++d) {
                    const int xs = std::clamp(x + d, 0, W - 1);
                    acc += k[d + radius] * px[c * plane + static_cast<std::size_t>(y) * W + xs];
                }
                tmp[c * plane + static_cast<std::size_t>(y) * W + x] = acc;
            }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int d = -radius; d <= radius; ++d) {
                    const int ys = std::clamp(y + d, 0, H - 1);
                    acc += k[d + radius] * tmp[c * plane + static_cast<std::size_t>(ys) * W + x];
                }
                px[c * plane + static_cast<std::size_t>(y) * W + x] = acc;
            }
    }
}

inline void pixelate(std::vector<double>& px, int C, int H, int W, double factor) {
    const int th = std::max(1, static_cast<int>(std::lround(H * factor)));
    const int tw = std::max(1, static_cast<int>(std::lround(W * factor)));
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> small(static_cast<std::size_t>(C) * th * tw, 0.0);
    const double sy = static_cast<double>(H) / th, sx = static_cast<double>(W) / tw;
    for (int c = 0; c < C; ++c)
        for (int a = 0; a < th; ++a)
            for (int b = 0; b < tw; ++b) {
                const double y0 = a * sy, y1 = (a + 1) * sy;
                const double x0 = b * sx, x1 = (b + 1) * sx;
                double acc = 0.0;
                for (int y = static_cast<int>(y0); y < H && y < y1; ++y) {
                    const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
                    if (wy <= 0.0) continue;
                    for (int x = static_cast<int>(x0); x < W && x < x1; ++x) {
                        const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
                        if (wx <= 0.0) continue;
                        acc += wy * wx * px[c * plane + static_cast<std::size_t>(y) * W + x];
                    }
                }
                small[(static_cast<std::size_t>(c) * th + a) * tw + b] = acc / (sy * sx);
            }
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int a = std::min(th - 1, y * th / H);
                const int b = std::min(tw - 1, x * tw / W);
                px[c * plane + static_cast<std::size_t>(y) * W + x] =
                    small[(static_cast<std::size_t>(c) * th + a) * tw + b];
            }
}

}  // namespace corruption

// Deterministic given (img, spec, seed); output clipped to [0,1].
inline TensorPtr corrupt(const TensorPtr& img, const ShiftSpec& spec, std::uint64_t seed = 0) {
    if (spec.severity < 1 || spec.severity > 5)
        throw ContractError("corrupt: severity must be in 1..5");
    if (img->shape.size() != 3) throw DimensionError("corrupt: image must be [C,H,W]");
    const int C = img->shape[0], H = img->shape[1], W = img->shape[2];
    const int s = spec.severity - 1;
    auto out = clone_detached(img);
    auto& px = out->data;
    switch (spec.family) {
        case ShiftFamily::gaussian_noise: {
            Rng rng(derive_seed(seed, "gaussian_noise"));
            const double sigma = corruption::kGaussianNoiseSigma[s];
            for (double& v : px) v += sigma * rng.gaussian();
            break;
        }
        case ShiftFamily::impulse_noise: {
            Rng rng(derive_seed(seed, "impulse_noise"));
            const double p = corruption::kImpulseFraction[s];
            for (double& v : px)
                if (rng.bernoulli(p)) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
            break;
        }
        case ShiftFamily::gaussian_blur:
            corruption::separable_blur(px, C, H, W, corruption::kBlurSigma[s]);
            break;
        case ShiftFamily::contrast: {
            double mean = 0.0;
            for (double v : px) mean += v;
            mean /= static_cast<double>(px.size());
            const double sc = corruption::kContrastScale[s];
            for (double& v : px) v = mean + sc * (v - mean);
            break;
        }
        case ShiftFamily::brightness: {
            const double shift = corruption::kBrightnessShift[s];
            for (double& v : px) v += shift;
            break;
        }
        case ShiftFamily::pixelate:
            corruption::pixelate(px, C, H, W, corruption::kPixelateFactor[s]);
            break;
    }
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// Per-sample corruption with per-sample derived seeds; labels preserved.
inline LabeledDataset corrupt_dataset(const LabeledDataset& data, const ShiftSpec& spec,
                                      std::uint64_t seed) {
    LabeledDataset out;
    out.images.reserve(data.size());
    out.labels = data.labels;
    for (std::size_t i = 0; i < data.size(); ++i)
        out.images.push_back(corrupt(data.images[i], spec, derive_seed(seed, std::to_string(i))));
    return out;
}

// ---------------------------------------------------------------------------
// export / import (manifest + tensors in the checkpoint binary format)
// ---------------------------------------------------------------------------

namespace detail {

inline Checkpoint pack_labeled(const std::vector<TensorPtr>& images, const std::vector<int>& labels,
                               const std::string& kind) {
    Checkpoint ck;
    ck.arch_id = kind;
    const int n = static_cast<int>(images.size());
    std::vector<int> shape = {n};
    for (int d : images[0]->shape) shape.push_back(d);
    ck.layout.push_back({0, "images", shape, 0, true});
    for (const auto& im : images) ck.flat.insert(ck.flat.end(), im->data.begin(), im->data.end());
    ck.layout.push_back({0, "labels", {n}, ck.flat.size(), true});
    for (int l : labels) ck.flat.push_back(static_cast<double>(l));
    return ck;
}

}  // namespace detail

inline void save_base_dataset(const std::filesystem::path& dir, const BaseDataset& ds) {
    std::filesystem::create_directories(dir);
    auto ck = detail::pack_labeled(ds.images, ds.labels, "dataset/base");
    save_checkpoint(dir / "data.bin", ck);
    write_kv(dir / "manifest.txt",
             {{"kind", "base"},
              {"seed", std::to_string(ds.generator_seed)},
              {"classes", std::to_string(ds.class_count)},
              {"samples", std::to_string(ds.size())},
              {"channels", std::to_string(ds.channels)},
              {"hw", std::to_string(ds.hw)}});
}

inline BaseDataset load_base_dataset(const std::filesystem::path& dir) {
    auto kv = read_kv(dir / "manifest.txt");
    auto ck = load_checkpoint(dir / "data.bin");
    if (ck.arch_id != "dataset/base") throw IoError("not a base dataset: " + dir.string());
    BaseDataset ds;
    ds.generator_seed = std::stoull(kv.at("seed"));
    ds.class_count = std::stoi(kv.at("classes"));
    ds.channels = std::stoi(kv.at("channels"));
    ds.hw = std::stoi(kv.at("hw"));
    const auto& ishape = ck.layout[0].shape;
    const int n = ishape[0];
    const std::vector<int> img_shape(ishape.begin() + 1, ishape.end());
    const std::size_t per = static_cast<std::size_t>(Tensor::checked_numel(img_shape));
    for (int i = 0; i < n; ++i) {
        auto t = make_tensor(img_shape);
        std::copy(ck.flat.begin() + static_cast<std::ptrdiff_t>(i * per),
                  ck.flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * per), t->data.begin());
        ds.images.push_back(std::move(t));
    }
    const std::size_t loff = ck.layout[1].offset;
    for (int i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(ck.flat[loff + i]));
    return ds;
}

inline void save_triples(const std::filesystem::path& dir, const std::vector<EditTriple>& triples,
                         const std::map<std::string, std::string>& manifest_extra = {}) {
    if (triples.empty()) throw ContractError("save_triples: empty");
    std::filesystem::create_directories(dir);
    Checkpoint ck;
    ck.arch_id = "dataset/triples";
    const int n = static_cast<int>(triples.size());
    std::vector<int> shape = {n};
    for (int d : triples[0].x->shape) shape.push_back(d);
    ck.layout.push_back({0, "x", shape, 0, true});
    for (const auto& t : triples) ck.flat.insert(ck.flat.end(), t.x->data.begin(), t.x->data.end());
    ck.layout.push_back({0, "x_prime", shape, ck.flat.size(), true});
    for (const auto& t : triples)
        ck.flat.insert(ck.flat.end(), t.x_prime->data.begin(), t.x_prime->data.end());
    auto push_ints = [&](const std::string& name, auto getter) {
        ck.layout.push_back({0, name, {n}, ck.flat.size(), true});
        for (const auto& t : triples) ck.flat.push_back(static_cast<double>(getter(t)));
    };
    push_ints("y", [](const EditTriple& t) { return t.y; });
    push_ints("style_variant", [](const EditTriple& t) { return t.style_variant; });
    push_ints("image_id", [](const EditTriple& t) { return t.image_id; });
    save_checkpoint(dir / "data.bin", ck);
    std::map<std::string, std::string> kv = manifest_extra;
    kv["kind"] = "triples";
    kv["count"] = std::to_string(n);
    write_kv(dir / "manifest.txt", kv);
}

inline std::vector<EditTriple> load_triples(const std::filesystem::path& dir) {
    auto ck = load_checkpoint(dir / "data.bin");
    if (ck.arch_id != "dataset/triples") throw IoError("not a triples dataset: " + dir.string());
    const auto& shape = ck.layout[0].shape;
    const int n = shape[0];
    const std::vector<int> img_shape(shape.begin() + 1, shape.end());
    const std::size_t per = static_cast<std::size_t>(Tensor::checked_numel(img_shape));
    auto grab = [&](std::size_t off, int i) {
        auto t = make_tensor(img_shape);
        std::copy(ck.flat.begin() + static_cast<std::ptrdiff_t>(off + i * per),
                  ck.flat.begin() + static_cast<std::ptrdiff_t>(off + (i + 1) * per),
                  t->data.begin());
        return t;
    };
    std::vector<EditTriple> out(n);
    for (int i = 0; i < n; ++i) {
        out[i].x = grab(ck.layout[0].offset, i);
        out[i].x_prime = grab(ck.layout[1].offset, i);
        out[i].y = static_cast<int>(ck.flat[ck.layout[2].offset + i]);
        out[i].style_variant = static_cast<int>(ck.flat[ck.layout[3].offset + i]);
        out[i].image_id = static_cast<int>(ck.flat[ck.layout[4].offset + i]);
    }
    return out;
}

}  // namespace editlab
