#pragma once

// Config-driven experiment orchestration: dataset generation, base-model
// training (with frozen-norm calibration), editing sweeps over layers x
// learning rates x restarts (optionally on a worker pool), interpolation
// curves, penalty reports and file emission. All randomness flows through
// derive_seed(global_seed, "component/path"); rerunning a config reproduces
// every CSV byte for byte (timestamps live in run_info.txt only).

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "editlab/checkpoint.hpp"
#include "editlab/data.hpp"
#include "editlab/editors.hpp"
#include "editlab/io.hpp"
#include "editlab/metrics.hpp"
#include "editlab/network.hpp"
#include "editlab/shiftlab.hpp"

namespace editlab {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// methods
// ---------------------------------------------------------------------------

enum class EditMethod {
    local_ft_collision,
    global_ft_collision,
    rewrite,
    direct_lowrank,
    local_ft_supervised,
    global_ft_forward,
    full_ft,
};

inline const std::vector<std::pair<std::string, EditMethod>>& method_table() {
    static const std::vector<std::pair<std::string, EditMethod>> t = {
        {"local-ft-collision", EditMethod::local_ft_collision},
        {"global-ft-collision", EditMethod::global_ft_collision},
        {"rewrite", EditMethod::rewrite},
        {"direct-lowrank", EditMethod::direct_lowrank},
        {"local-ft-supervised", EditMethod::local_ft_supervised},
        {"global-ft-forward", EditMethod::global_ft_forward},
        {"full-ft", EditMethod::full_ft},
    };
    return t;
}

inline EditMethod parse_method(const std::string& name) {
    for (const auto& [n, m] : method_table())
        if (n == name) return m;
    throw ConfigError("unknown edit method '" + name + "'");
}

inline std::string method_name(EditMethod m) {
    for (const auto& [n, mm] : method_table())
        if (mm == m) return n;
    return "?";
}

inline bool method_is_lowrank(EditMethod m) {
    return m == EditMethod::rewrite || m == EditMethod::direct_lowrank;
}

inline bool method_is_layered(EditMethod m) { return m != EditMethod::full_ft; }

inline std::vector<double> default_lr_grid(EditMethod m) {
    switch (m) {
        case EditMethod::local_ft_collision:
        case EditMethod::global_ft_collision:
            return {1e-3, 1e-2, 1e-1};
        case EditMethod::rewrite:
        case EditMethod::direct_lowrank:
            return {1e-2, 1e-1, 1.0, 10.0, 100.0};
        default:
            return {1e-4, 1e-3, 1e-2};
    }
}

inline int default_restarts(EditMethod m) { return method_is_lowrank(m) ? 10 : 1; }

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct DataConfig {
    int classes = 6;
    int train_per_class = 120;
    int val_per_class = 40;
    int pool_per_class = 15;
    int channels = 3;
    int hw = 32;
    std::string style = "checker";
    int style_variants = 2;
    std::string region = "object";  // or "center_box"
    double box_frac = 0.5;
};

struct BaseTrainConfig {
    int epochs = 20;
    double learning_rate = 0.05;
    int batch_size = 32;
};

struct SplitConfig {
    int n_train = 10;
    double min_train_ratio = 0.5;
    int s_train = 1;
};

struct EditStageConfig {
    std::string method = "local-ft-supervised";
    std::vector<int> layers = {4};       // editable-slot indices; ignored by full-ft
    std::vector<double> lr_grid;         // empty = per-method default
    int restarts = 0;                    // 0 = per-method default (10 low-rank, 1 otherwise)
    int rank = 1;
    int max_epochs = 2000;               // desk-scale budget; the type default is 10000
    double early_stop_ratio = 0.5;
    int batch_size = 0;
    bool center_features = false;
};

struct ReportConfig {
    bool svg = true;
    std::vector<std::string> curve_shifts;  // OOD evals along the curve; empty = first of shifts
};

struct ExperimentConfig {
    std::uint64_t seed = 20260811;
    std::string out_dir = "runs/out";
    int jobs = 1;
    DataConfig data;
    std::string preset = "cnn-small";
    BaseTrainConfig base_training;
    SplitConfig split;
    EditStageConfig edit;
    std::vector<double> alphas;          // empty = 0.0, 0.1, ..., 1.0
    std::vector<std::string> shifts = {"gaussian_noise:3", "impulse_noise:3", "gaussian_blur:3",
                                       "contrast:3",       "brightness:3",    "pixelate:3"};
    ReportConfig report;

    std::vector<double> alpha_grid() const {
        if (!alphas.empty()) return alphas;
        std::vector<double> g;
        for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
        return g;
    }

    std::vector<std::string> curve_shift_list() const {
        if (!report.curve_shifts.empty()) return report.curve_shifts;
        if (!shifts.empty()) return {shifts.front()};
        return {};
    }

    void validate() const {
        EditMethod m = parse_method(edit.method);
        if (method_is_layered(m) && edit.layers.empty())
            throw ConfigError("edit.layers must be nonempty");
        if (!edit.lr_grid.empty())
            for (double lr : edit.lr_grid)
                if (!(lr >= 0.0)) throw ConfigError("edit.lr_grid entries must be >= 0");
        if (edit.restarts < 0) throw ConfigError("edit.restarts must be >= 0");
        if (edit.rank < 1) throw ConfigError("edit.rank must be >= 1");
        if (edit.max_epochs < 1) throw ConfigError("edit.max_epochs must be >= 1");
        if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
        if (data.style_variants < 1) throw ConfigError("data.style_variants must be >= 1");
        if (data.region != "object" && data.region != "center_box")
            throw ConfigError("data.region must be 'object' or 'center_box'");
        if (split.n_train < 1) throw ConfigError("split.n_train must be >= 1");
        if (!(split.min_train_ratio > 0.0 && split.min_train_ratio <= 1.0))
            throw ConfigError("split.min_train_ratio must be in (0,1]");
        auto grid = alpha_grid();
        if (!std::is_sorted(grid.begin(), grid.end()) || grid.front() != 0.0 || grid.back() != 1.0)
            throw ConfigError("alphas must be sorted and include 0 and 1");
        for (const auto& s : shifts) parse_shift_spec(s);
        for (const auto& s : curve_shift_list()) parse_shift_spec(s);
        if (preset != "cnn-small" && preset != "mlp-small")
            throw ConfigError("unknown model preset '" + preset + "'");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
    }
};

// ---- JSON binding (strict: unknown keys are schema errors) ----------------

namespace cfgdetail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace cfgdetail

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["jobs"] = c.jobs;
    j["data"] = {{"classes", c.data.classes},
                 {"train_per_class", c.data.train_per_class},
                 {"val_per_class", c.data.val_per_class},
                 {"pool_per_class", c.data.pool_per_class},
                 {"channels", c.data.channels},
                 {"hw", c.data.hw},
                 {"style", c.data.style},
                 {"style_variants", c.data.style_variants},
                 {"region", c.data.region},
                 {"box_frac", c.data.box_frac}};
    j["model"] = {{"preset", c.preset}};
    j["base_training"] = {{"epochs", c.base_training.epochs},
                          {"learning_rate", c.base_training.learning_rate},
                          {"batch_size", c.base_training.batch_size}};
    j["split"] = {{"n_train", c.split.n_train},
                  {"min_train_ratio", c.split.min_train_ratio},
                  {"s_train", c.split.s_train}};
    j["edit"] = {{"method", c.edit.method},
                 {"layers", c.edit.layers},
                 {"lr_grid", c.edit.lr_grid},
                 {"restarts", c.edit.restarts},
                 {"rank", c.edit.rank},
                 {"max_epochs", c.edit.max_epochs},
                 {"early_stop_ratio", c.edit.early_stop_ratio},
                 {"batch_size", c.edit.batch_size},
                 {"center_features", c.edit.center_features}};
    j["alphas"] = c.alphas;
    j["shifts"] = c.shifts;
    j["report"] = {{"svg", c.report.svg}, {"curve_shifts", c.report.curve_shifts}};
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using cfgdetail::check_keys;
    using cfgdetail::maybe;
    ExperimentConfig c;
    check_keys(j, {"seed", "out_dir", "jobs", "data", "model", "base_training", "split", "edit",
                   "alphas", "shifts", "report"},
               "config");
    maybe(j, "seed", c.seed);
    maybe(j, "out_dir", c.out_dir);
    maybe(j, "jobs", c.jobs);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"classes", "train_per_class", "val_per_class", "pool_per_class", "channels",
                       "hw", "style", "style_variants", "region", "box_frac"},
                   "data");
        maybe(d, "classes", c.data.classes);
        maybe(d, "train_per_class", c.data.train_per_class);
        maybe(d, "val_per_class", c.data.val_per_class);
        maybe(d, "pool_per_class", c.data.pool_per_class);
        maybe(d, "channels", c.data.channels);
        maybe(d, "hw", c.data.hw);
        maybe(d, "style", c.data.style);
        maybe(d, "style_variants", c.data.style_variants);
        maybe(d, "region", c.data.region);
        maybe(d, "box_frac", c.data.box_frac);
    }
    if (j.contains("model")) {
        check_keys(j.at("model"), {"preset"}, "model");
        maybe(j.at("model"), "preset", c.preset);
    }
    if (j.contains("base_training")) {
        const auto& b = j.at("base_training");
        check_keys(b, {"epochs", "learning_rate", "batch_size"}, "base_training");
        maybe(b, "epochs", c.base_training.epochs);
        maybe(b, "learning_rate", c.base_training.learning_rate);
        maybe(b, "batch_size", c.base_training.batch_size);
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        check_keys(s, {"n_train", "min_train_ratio", "s_train"}, "split");
        maybe(s, "n_train", c.split.n_train);
        maybe(s, "min_train_ratio", c.split.min_train_ratio);
        maybe(s, "s_train", c.split.s_train);
    }
    if (j.contains("edit")) {
        const auto& e = j.at("edit");
        check_keys(e, {"method", "layers", "lr_grid", "restarts", "rank", "max_epochs",
                       "early_stop_ratio", "batch_size", "center_features"},
                   "edit");
        maybe(e, "method", c.edit.method);
        maybe(e, "layers", c.edit.layers);
        maybe(e, "lr_grid", c.edit.lr_grid);
        maybe(e, "restarts", c.edit.restarts);
        maybe(e, "rank", c.edit.rank);
        maybe(e, "max_epochs", c.edit.max_epochs);
        maybe(e, "early_stop_ratio", c.edit.early_stop_ratio);
        maybe(e, "batch_size", c.edit.batch_size);
        maybe(e, "center_features", c.edit.center_features);
    }
    maybe(j, "alphas", c.alphas);
    maybe(j, "shifts", c.shifts);
    if (j.contains("report")) {
        const auto& r = j.at("report");
        check_keys(r, {"svg", "curve_shifts"}, "report");
        maybe(r, "svg", c.report.svg);
        maybe(r, "curve_shifts", c.report.curve_shifts);
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
    return fnv1a64(to_json(c).dump());
}

// ---------------------------------------------------------------------------
// base training
// ---------------------------------------------------------------------------

// After training, per-channel statistics of every FrozenNorm input are
// measured on the training set and folded into (gamma, beta) so the layer
// function is unchanged while (mean, var) become the frozen data statistics.
inline void calibrate_frozen_norms(Network& net, const LabeledDataset& train) {
    std::vector<int> norm_layers;
    for (int i = 0; i < net.layer_count(); ++i)
        if (std::holds_alternative<FrozenNormLayer>(net.layers[i])) norm_layers.push_back(i);
    if (norm_layers.empty()) return;
    struct Stats {
        std::vector<double> sum, sumsq;
        std::size_t count = 0;
    };
    std::map<int, Stats> stats;
    NoGradGuard ng;
    for (const auto& x : train.images) {
        TensorPtr h = x;
        for (int i = 0; i < net.layer_count(); ++i) {
            if (std::holds_alternative<FrozenNormLayer>(net.layers[i])) {
                auto& fn = std::get<FrozenNormLayer>(net.layers[i]);
                const int C = static_cast<int>(fn.mean.size());
                auto& st = stats[i];
                if (st.sum.empty()) {
                    st.sum.assign(C, 0.0);
                    st.sumsq.assign(C, 0.0);
                }
                const std::size_t hw = h->data.size() / static_cast<std::size_t>(C);
                for (int c = 0; c < C; ++c)
                    for (std::size_t k = 0; k < hw; ++k) {
                        const double v = h->data[c * hw + k];
                        st.sum[c] += v;
                        st.sumsq[c] += v * v;
                    }
                st.count += hw;
            }
            h = net.apply_layer(i, h);
        }
    }
    for (int i : norm_layers) {
        auto& fn = std::get<FrozenNormLayer>(net.layers[i]);
        const auto& st = stats[i];
        const int C = static_cast<int>(fn.mean.size());
        for (int c = 0; c < C; ++c) {
            const double mu1 = st.sum[c] / static_cast<double>(st.count);
            const double var1 =
                std::max(0.0, st.sumsq[c] / static_cast<double>(st.count) - mu1 * mu1);
            const double s0 = std::sqrt(fn.var[c] + kFrozenNormEps);
            const double s1 = std::sqrt(var1 + kFrozenNormEps);
            const double g0 = fn.gamma->data[c];
            fn.gamma->data[c] = g0 * s1 / s0;
            fn.beta->data[c] += g0 * (mu1 - fn.mean[c]) / s0;
            fn.mean[c] = mu1;
            fn.var[c] = var1;
        }
    }
}

// Cross-entropy SGD training of the base model; returns the per-epoch trace
// (epoch, mean train loss, val accuracy). Keeps final-epoch weights, then
// calibrates frozen-norm statistics.
inline EditTrace train_base(Network& net, const LabeledDataset& train, const LabeledDataset& val,
                            const BaseTrainConfig& cfg, std::uint64_t seed) {
    if (train.empty() || val.empty()) throw ContractError("train_base: empty dataset");
    auto params = collect_params(net);
    const SgdConfig sgd{cfg.learning_rate, 0.9, 1e-4};
    const int n = static_cast<int>(train.size());
    const int B = cfg.batch_size > 0 ? cfg.batch_size : n;
    Rng shuffle_rng(derive_seed(seed, "shuffle"));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    EditTrace trace;
    trace.points.push_back({0, 0.0, accuracy(net, val)});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (B < n) shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (int start = 0; start < n; start += B) {
            const int end = std::min(n, start + B);
            zero_grads(params);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (int k = start; k < end; ++k) {
                const int i = order[k];
                auto loss = cross_entropy_logits(forward(net, train.images[i]), train.labels[i]);
                epoch_loss += loss->data[0];
                backward(scale(loss, inv_b));
            }
            sgd_step(params, sgd);
        }
        trace.points.push_back({epoch, epoch_loss / n, accuracy(net, val)});
    }
    trace.best_epoch = cfg.epochs;
    trace.best_val_acc = trace.points.back().val_acc;
    calibrate_frozen_norms(net, train);
    return trace;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct RunRecord {
    std::string method;
    int layer = 0;  // editable slot; -1 for full-ft
    double lr = 0.0;
    int restart = 0;
    std::uint64_t seed = 0;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    int epochs_run = 0;
    std::string stop_reason;
    bool diverged = false;
};

struct LayerOutcome {
    int layer = 0;
    RunRecord winner;
    EditTrace trace;
    CurveTable curve;
    std::vector<PenaltyReport> penalties;
};

struct RunResult {
    std::uint64_t config_hash = 0;
    double base_val_acc = 0.0;
    EditTrace base_trace;
    std::vector<RunRecord> runs;
    std::vector<LayerOutcome> outcomes;
};

struct ExperimentData {
    BaseDataset base_train, base_val, pool;
    std::vector<EditTriple> triples;
    EditDataset edit_data;
    SupervisedEditData supervised;
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    d.base_train = generate_base(derive_seed(cfg.seed, "data/train"), cfg.data.classes,
                                 cfg.data.train_per_class, cfg.data.channels, cfg.data.hw);
    d.base_val = generate_base(derive_seed(cfg.seed, "data/val"), cfg.data.classes,
                               cfg.data.val_per_class, cfg.data.channels, cfg.data.hw);
    d.pool = generate_base(derive_seed(cfg.seed, "data/pool"), cfg.data.classes,
                           cfg.data.pool_per_class, cfg.data.channels, cfg.data.hw);
    RegionSpec region;
    region.kind = cfg.data.region == "object" ? RegionSpec::Kind::object
                                              : RegionSpec::Kind::center_box;
    region.box_frac = cfg.data.box_frac;
    d.triples = generate_edit_task(d.pool, region, cfg.data.style, cfg.data.style_variants);
    SplitPolicy policy{cfg.split.n_train, cfg.split.min_train_ratio, cfg.split.s_train,
                       derive_seed(cfg.seed, "split")};
    auto [train, val] = split_edit_dataset(d.triples, policy);
    d.edit_data.train = std::move(train);
    d.edit_data.val = std::move(val);
    d.edit_data.provenance = "style=" + cfg.data.style + " region=" + cfg.data.region;
    d.supervised.train = d.edit_data.train_as_labeled();
    d.supervised.val = d.edit_data.val_as_labeled();
    return d;
}

inline Network make_base_model(const ExperimentConfig& cfg, const ExperimentData& data,
                               EditTrace* trace_out = nullptr, bool quiet = true) {
    Network net = cfg.preset == "cnn-small"
                      ? build_cnn_small(cfg.data.classes, derive_seed(cfg.seed, "model-init"),
                                        cfg.data.channels, cfg.data.hw)
                      : build_mlp_small(cfg.data.classes, derive_seed(cfg.seed, "model-init"),
                                        cfg.data.channels, cfg.data.hw);
    auto trace = train_base(net, data.base_train.as_labeled(), data.base_val.as_labeled(),
                            cfg.base_training, derive_seed(cfg.seed, "base-training"));
    if (!quiet)
        std::cout << "base model: val acc " << fmt_double(trace.best_val_acc) << " after "
                  << cfg.base_training.epochs << " epochs\n";
    if (trace_out) *trace_out = std::move(trace);
    return net;
}

namespace rundetail {

struct Task {
    EditMethod method;
    int layer;  // slot, or -1 for full-ft
    double lr;
    int lr_index;
    int restart;
    std::uint64_t seed;
};

struct TaskOutcome {
    RunRecord record;
    EditTrace trace;
    std::optional<Network> net;
};

inline TaskOutcome execute(const Network& base, const ExperimentData& data,
                           const ExperimentConfig& cfg, const Task& t) {
    EditConfig ec;
    ec.layer = t.layer < 0 ? 0 : t.layer;
    ec.learning_rate = t.lr;
    ec.max_epochs = cfg.edit.max_epochs;
    ec.early_stop_ratio = cfg.edit.early_stop_ratio;
    ec.rank = cfg.edit.rank;
    ec.seed = t.seed;
    ec.batch_size = cfg.edit.batch_size;
    ec.center_features = cfg.edit.center_features;

    TaskOutcome out;
    out.record = {method_name(t.method), t.layer, t.lr, t.restart, t.seed, 0, 0.0, 0, "", false};
    try {
        EditResult res;
        switch (t.method) {
            case EditMethod::local_ft_collision:
                res = edit_local_ft_collision(base, data.edit_data, ec);
                break;
            case EditMethod::global_ft_collision:
                res = edit_global_ft_collision(base, data.edit_data, ec);
                break;
            case EditMethod::rewrite: {
                auto lr_res = edit_rewrite(base, data.edit_data, data.base_train.images, ec);
                res = {std::move(lr_res.net), std::move(lr_res.trace)};
                break;
            }
            case EditMethod::direct_lowrank: {
                auto lr_res = edit_direct_lowrank(base, data.edit_data, ec);
                res = {std::move(lr_res.net), std::move(lr_res.trace)};
                break;
            }
            case EditMethod::local_ft_supervised:
                res = edit_local_ft_supervised(base, data.supervised, ec);
                break;
            case EditMethod::global_ft_forward:
                res = edit_global_ft_forward(base, data.supervised, ec);
                break;
            case EditMethod::full_ft:
                res = edit_full_ft(base, data.supervised, ec);
                break;
        }
        out.record.best_epoch = res.trace.best_epoch;
        out.record.best_val_acc = res.trace.best_val_acc;
        out.record.epochs_run = static_cast<int>(res.trace.points.size()) - 1;
        out.record.stop_reason = to_string(res.trace.stop_reason);
        out.trace = std::move(res.trace);
        out.net = std::move(res.net);
    } catch (const DivergenceError&) {
        out.record.diverged = true;
        out.record.stop_reason = "diverged";
    }
    return out;
}

}  // namespace rundetail

// Runs the full pipeline and writes CSVs, checkpoints and report files under
// cfg.out_dir. Deterministic given cfg.
inline RunResult run_experiment(const ExperimentConfig& cfg, bool quiet = false);

// Re-renders plot-data TSVs (and optional SVGs) from the CSVs in `dir` alone.
inline void emit_report(const std::filesystem::path& dir, bool svg);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

namespace rundetail {

inline std::vector<std::string> runs_csv_header() {
    return {"method", "layer",      "lr",          "restart", "seed",
            "best_epoch", "best_val_acc", "epochs_run", "stop_reason", "diverged"};
}

inline std::vector<std::string> runs_csv_row(const RunRecord& r) {
    return {r.method,
            fmt_int(r.layer),
            fmt_double(r.lr),
            fmt_int(r.restart),
            std::to_string(r.seed),
            fmt_int(r.best_epoch),
            fmt_double(r.best_val_acc),
            fmt_int(r.epochs_run),
            r.stop_reason,
            r.diverged ? "1" : "0"};
}

inline void write_trace_csv(const std::filesystem::path& path, const EditTrace& trace) {
    CsvWriter w(path);
    w.row({"epoch", "train_loss", "val_acc"});
    for (const auto& p : trace.points)
        w.row({fmt_int(p.epoch), fmt_double(p.train_loss), fmt_double(p.val_acc)});
    w.close();
}

// minimal self-contained SVG line/scatter plots
struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
};

inline void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel,
                           const std::vector<Series>& series, bool scatter) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    const int W = 640, H = 440, ml = 70, mr = 30, mt = 45, mb = 55;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) return;
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
       << "</text>\n";
    // axes with 5 ticks each
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5.0;
        const double yv = ymin + (ymax - ymin) * i / 5.0;
        os << "<line x1='" << px(xv) << "' y1='" << H - mb << "' x2='" << px(xv) << "' y2='"
           << H - mb + 5 << "' stroke='black'/>\n";
        os << "<text x='" << px(xv) << "' y='" << H - mb + 18
           << "' text-anchor='middle' font-size='11'>" << fmt_double(std::round(xv * 1000) / 1000)
           << "</text>\n";
        os << "<line x1='" << ml - 5 << "' y1='" << py(yv) << "' x2='" << ml << "' y2='" << py(yv)
           << "' stroke='black'/>\n";
        os << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
           << "' text-anchor='end' font-size='11'>" << fmt_double(std::round(yv * 1000) / 1000)
           << "</text>\n";
    }
    os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
    os << "<text x='16' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' "
       << "transform='rotate(-90 16 " << (mt + H - mb) / 2 << ")'>" << ylabel << "</text>\n";
    int ci = 0;
    for (const auto& s : series) {
        const char* color = palette[ci % 8];
        if (!scatter) {
            os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
            for (auto [x, y] : s.pts) os << px(x) << "," << py(y) << " ";
            os << "'/>\n";
        }
        for (auto [x, y] : s.pts)
            os << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='" << color
               << "'/>\n";
        os << "<text x='" << W - mr - 6 << "' y='" << mt + 14 + 14 * ci
           << "' text-anchor='end' font-size='11' fill='" << color << "'>" << s.name
           << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
    if (!os.good()) throw IoError("write failed: " + path.string());
}

}  // namespace rundetail

inline RunResult run_experiment(const ExperimentConfig& cfg, bool quiet) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    std::error_code ec_ign;
    fs::create_directories(out, ec_ign);
    if (!fs::exists(out)) throw IoError("cannot create output directory: " + out.string());

    RunResult result;
    result.config_hash = config_hash(cfg);

    auto data = prepare_data(cfg);
    if (!quiet)
        std::cout << "data: " << data.base_train.size() << " train / " << data.base_val.size()
                  << " val, edit " << data.edit_data.train.size() << "/"
                  << data.edit_data.val.size() << " triples\n";

    Network base = make_base_model(cfg, data, &result.base_trace, quiet);
    result.base_val_acc = result.base_trace.best_val_acc;

    // task grid
    const EditMethod method = parse_method(cfg.edit.method);
    std::vector<double> lr_grid = cfg.edit.lr_grid.empty() ? default_lr_grid(method)
                                                           : cfg.edit.lr_grid;
    const int restarts = cfg.edit.restarts > 0 ? cfg.edit.restarts : default_restarts(method);
    std::vector<int> layers = method_is_layered(method) ? cfg.edit.layers : std::vector<int>{-1};

    std::vector<rundetail::Task> tasks;
    for (int layer : layers)
        for (std::size_t li = 0; li < lr_grid.size(); ++li)
            for (int r = 0; r < restarts; ++r) {
                const std::string path = "edit/" + cfg.edit.method + "/layer" +
                                         std::to_string(layer) + "/lr" + std::to_string(li) +
                                         "/restart" + std::to_string(r);
                tasks.push_back({method, layer, lr_grid[li], static_cast<int>(li), r,
                                 derive_seed(cfg.seed, path)});
            }

    std::vector<rundetail::TaskOutcome> outcomes(tasks.size());
    {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) return;
                outcomes[i] = rundetail::execute(base, data, cfg, tasks[i]);
                if (!quiet) {
                    const auto& r = outcomes[i].record;
                    std::cout << "run " << r.method << " layer=" << r.layer << " lr="
                              << fmt_double(r.lr) << " restart=" << r.restart
                              << (r.diverged ? " diverged"
                                             : " best_val_acc=" + fmt_double(r.best_val_acc))
                              << "\n";
                }
            }
        };
        const int n_threads = std::min<std::size_t>(cfg.jobs, tasks.size());
        if (n_threads <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }
    }
    for (const auto& o : outcomes) result.runs.push_back(o.record);

    // winner per layer: argmax best_val_acc over (lr, restart), ties by lower
    // lr then lower restart index; diverged runs are excluded
    const auto ckpt_orig = capture(base);
    save_checkpoint(out / "original.ckpt", ckpt_orig,
                    {{"kind", "original"}, {"arch", base.arch_id},
                     {"config_hash", std::to_string(result.config_hash)}});

    const auto alpha = cfg.alpha_grid();
    auto orig_val_labeled = data.base_val.as_labeled();
    auto edit_val_labeled = data.edit_data.val_as_labeled();

    std::vector<EvalSet> evals = {{"orig_val", orig_val_labeled}, {"edit_val", edit_val_labeled}};
    for (const auto& sname : cfg.curve_shift_list()) {
        const auto spec = parse_shift_spec(sname);
        evals.push_back({"orig_val~" + sname,
                         corrupt_dataset(orig_val_labeled, spec,
                                         derive_seed(cfg.seed, "curve-shift/" + sname))});
    }

    for (int layer : layers) {
        const rundetail::TaskOutcome* best = nullptr;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].layer != layer || outcomes[i].record.diverged) continue;
            if (!best || outcomes[i].record.best_val_acc > best->record.best_val_acc ||
                (outcomes[i].record.best_val_acc == best->record.best_val_acc &&
                 (outcomes[i].record.lr < best->record.lr ||
                  (outcomes[i].record.lr == best->record.lr &&
                   outcomes[i].record.restart < best->record.restart))))
                best = &outcomes[i];
        }
        if (!best) {
            if (!quiet) std::cout << "layer " << layer << ": all runs diverged, skipped\n";
            continue;
        }
        LayerOutcome lo;
        lo.layer = layer;
        lo.winner = best->record;
        lo.trace = best->trace;
        const Network& edited = *best->net;
        lo.curve = interpolation_sweep(base, ckpt_orig, capture(edited), alpha, evals);
        for (const auto& sname : cfg.shifts) {
            const auto spec = parse_shift_spec(sname);
            lo.penalties.push_back(make_penalty_report(
                base, edited, orig_val_labeled, edit_val_labeled, spec,
                derive_seed(cfg.seed, "penalty-shift/" + sname), cfg.edit.method, layer,
                best->record.seed));
        }
        save_checkpoint(out / ("edited_" + cfg.edit.method + "_layer" + std::to_string(layer) +
                               ".ckpt"),
                        capture(edited),
                        {{"kind", "edited"},
                         {"method", cfg.edit.method},
                         {"layer", std::to_string(layer)},
                         {"seed", std::to_string(best->record.seed)}});
        rundetail::write_trace_csv(out / ("trace_layer" + std::to_string(layer) + ".csv"),
                                   lo.trace);
        result.outcomes.push_back(std::move(lo));
    }

    // CSV emission
    {
        rundetail::write_trace_csv(out / "base.csv", result.base_trace);
        CsvWriter w(out / "runs.csv");
        w.row(rundetail::runs_csv_header());
        for (const auto& r : result.runs) w.row(rundetail::runs_csv_row(r));
        w.close();
    }
    {
        CsvWriter w(out / "curves.csv");
        w.row({"method", "layer", "alpha", "eval", "accuracy"});
        for (const auto& lo : result.outcomes)
            for (const auto& row : lo.curve)
                w.row({cfg.edit.method, fmt_int(lo.layer), fmt_double(row.alpha), row.eval_name,
                       fmt_double(row.accuracy)});
        w.close();
    }
    {
        CsvWriter w(out / "penalties.csv");
        w.row(penalty_csv_header());
        for (const auto& lo : result.outcomes)
            for (const auto& p : lo.penalties) w.row(penalty_csv_row(p));
        w.close();
    }
    {
        std::ofstream os(out / "config_used.json", std::ios::binary);
        os << to_json(cfg).dump(2) << "\n";
    }
    {
        // timestamps are quarantined here; every CSV is rerun-stable
        const auto now = std::chrono::system_clock::now();
        const auto t = std::chrono::system_clock::to_time_t(now);
        char buf[64];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        std::ofstream os(out / "run_info.txt", std::ios::binary);
        os << "config_hash=" << result.config_hash << "\n";
        os << "seed=" << cfg.seed << "\n";
        os << "base_val_acc=" << fmt_double(result.base_val_acc) << "\n";
        os << "timestamp=" << buf << "\n";
    }
    emit_report(out, cfg.report.svg);
    return result;
}

inline void emit_report(const std::filesystem::path& dir, bool svg) {
    namespace fs = std::filesystem;
    const auto curves_path = dir / "curves.csv";
    if (!fs::exists(curves_path)) throw IoError("emit_report: missing " + curves_path.string());
    auto rows = read_csv(curves_path);
    if (rows.empty()) throw IoError("emit_report: empty curves.csv");

    // rows: method, layer, alpha, eval, accuracy
    struct Key {
        std::string method;
        int layer;
        bool operator<(const Key& o) const {
            return method < o.method || (method == o.method && layer < o.layer);
        }
    };
    std::map<Key, std::map<std::string, std::vector<std::pair<double, double>>>> curves;
    std::vector<std::string> eval_order;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 5) throw IoError("emit_report: malformed curves.csv row");
        Key k{r[0], std::stoi(r[1])};
        curves[k][r[3]].push_back({parse_double(r[2]), parse_double(r[4])});
        if (std::find(eval_order.begin(), eval_order.end(), r[3]) == eval_order.end())
            eval_order.push_back(r[3]);
    }

    fs::create_directories(dir / "plotdata");
    if (svg) fs::create_directories(dir / "svg");
    for (auto& [key, by_eval] : curves) {
        const std::string stem = key.method + "_layer" + std::to_string(key.layer);
        // accuracy-vs-alpha series file: alpha column plus one column per eval
        {
            std::ofstream os(dir / "plotdata" / ("curve_" + stem + ".tsv"), std::ios::binary);
            os << "alpha";
            for (const auto& ev : eval_order)
                if (by_eval.count(ev)) os << "\t" << ev;
            os << "\n";
            const auto& first = by_eval.begin()->second;
            for (std::size_t i = 0; i < first.size(); ++i) {
                os << fmt_double(first[i].first);
                for (const auto& ev : eval_order)
                    if (by_eval.count(ev)) os << "\t" << fmt_double(by_eval[ev][i].second);
                os << "\n";
            }
            if (!os.good()) throw IoError("emit_report: write failed for curve_" + stem);
        }
        // OOD-vs-ID scatter per shifted eval, if any
        std::vector<std::string> ood_evals;
        for (const auto& ev : eval_order)
            if (by_eval.count(ev) && ev.rfind("orig_val~", 0) == 0) ood_evals.push_back(ev);
        for (const auto& ood : ood_evals) {
            std::ofstream os(dir / "plotdata" / ("scatter_" + stem + ".tsv"), std::ios::binary);
            os << "alpha\tid_acc\tood_acc\n";
            const auto& id_pts = by_eval["orig_val"];
            const auto& ood_pts = by_eval[ood];
            for (std::size_t i = 0; i < id_pts.size(); ++i)
                os << fmt_double(id_pts[i].first) << "\t" << fmt_double(id_pts[i].second) << "\t"
                   << fmt_double(ood_pts[i].second) << "\n";
            if (!os.good()) throw IoError("emit_report: write failed for scatter_" + stem);
        }
        if (svg) {
            std::vector<rundetail::Series> series;
            for (const auto& ev : eval_order)
                if (by_eval.count(ev)) series.push_back({ev, by_eval[ev]});
            rundetail::write_svg_plot(dir / "svg" / ("curve_" + stem + ".svg"),
                                      "accuracy along interpolation (" + stem + ")", "alpha",
                                      "accuracy", series, false);
            for (const auto& ood : ood_evals) {
                std::vector<rundetail::Series> sc;
                rundetail::Series s{ood + " vs orig_val", {}};
                const auto& id_pts = by_eval["orig_val"];
                const auto& ood_pts = by_eval[ood];
                for (std::size_t i = 0; i < id_pts.size(); ++i)
                    s.pts.push_back({id_pts[i].second, ood_pts[i].second});
                sc.push_back(std::move(s));
                rundetail::write_svg_plot(dir / "svg" / ("scatter_" + stem + ".svg"),
                                          "OOD vs ID accuracy (" + stem + ")", "id accuracy",
                                          "ood accuracy", sc, true);
            }
        }
    }
}

}  // namespace editlab
