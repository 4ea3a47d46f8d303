#pragma once

// OOD penalty metrics and robustness-curve assembly. Penalties are raw
// accuracy differences in [-1, 1]; human-facing output multiplies by 100.

#include <string>
#include <vector>

#include "editlab/data.hpp"
#include "editlab/editors.hpp"
#include "editlab/io.hpp"
#include "editlab/network.hpp"
#include "editlab/shiftlab.hpp"

namespace editlab {

// Acc(f_edited, shifted orig val) - Acc(f_orig, shifted orig val)
inline double orig_task_ood_penalty(const Network& f_edited, const Network& f_orig,
                                    const LabeledDataset& shifted_orig_val) {
    if (shifted_orig_val.empty()) throw ContractError("orig_task_ood_penalty: empty dataset");
    return accuracy(f_edited, shifted_orig_val) - accuracy(f_orig, shifted_orig_val);
}

// Acc(f_edited, shifted edit val) - Acc(f_edited, clean edit val)
inline double edit_task_ood_penalty(const Network& f_edited, const LabeledDataset& shifted_edit_val,
                                    const LabeledDataset& clean_edit_val) {
    if (shifted_edit_val.empty() || clean_edit_val.empty())
        throw ContractError("edit_task_ood_penalty: empty dataset");
    return accuracy(f_edited, shifted_edit_val) - accuracy(f_edited, clean_edit_val);
}

// All component accuracies for one (edited model, shift) cell; the stored
// penalties are exact arithmetic of the stored components.
struct PenaltyReport {
    std::string method;
    int layer = 0;
    std::uint64_t seed = 0;
    ShiftSpec shift;
    double acc_orig_clean = 0.0;
    double acc_orig_shift_origmodel = 0.0;
    double acc_orig_shift_edited = 0.0;
    double acc_edit_clean = 0.0;
    double acc_edit_shift = 0.0;

    double orig_penalty() const { return acc_orig_shift_edited - acc_orig_shift_origmodel; }
    double edit_penalty() const { return acc_edit_shift - acc_edit_clean; }
};

inline PenaltyReport make_penalty_report(const Network& f_orig, const Network& f_edited,
                                         const LabeledDataset& orig_val,
                                         const LabeledDataset& edit_val, const ShiftSpec& shift,
                                         std::uint64_t corruption_seed, const std::string& method,
                                         int layer, std::uint64_t seed) {
    PenaltyReport r;
    r.method = method;
    r.layer = layer;
    r.seed = seed;
    r.shift = shift;
    const auto shifted_orig = corrupt_dataset(orig_val, shift, derive_seed(corruption_seed, "orig"));
    const auto shifted_edit = corrupt_dataset(edit_val, shift, derive_seed(corruption_seed, "edit"));
    r.acc_orig_clean = accuracy(f_orig, orig_val);
    r.acc_orig_shift_origmodel = accuracy(f_orig, shifted_orig);
    r.acc_orig_shift_edited = accuracy(f_edited, shifted_orig);
    r.acc_edit_clean = accuracy(f_edited, edit_val);
    r.acc_edit_shift = accuracy(f_edited, shifted_edit);
    return r;
}

inline const std::vector<std::string>& penalty_csv_header() {
    static const std::vector<std::string> h = {
        "method",          "layer",         "seed",          "shift_family",
        "severity",        "acc_orig_clean", "acc_orig_shift_origmodel",
        "acc_orig_shift_edited", "acc_edit_clean", "acc_edit_shift",
        "orig_penalty",    "edit_penalty"};
    return h;
}

inline std::vector<std::string> penalty_csv_row(const PenaltyReport& r) {
    return {r.method,
            fmt_int(r.layer),
            std::to_string(r.seed),
            shift_family_names()[static_cast<int>(r.shift.family)],
            fmt_int(r.shift.severity),
            fmt_double(r.acc_orig_clean),
            fmt_double(r.acc_orig_shift_origmodel),
            fmt_double(r.acc_orig_shift_edited),
            fmt_double(r.acc_edit_clean),
            fmt_double(r.acc_edit_shift),
            fmt_double(r.orig_penalty()),
            fmt_double(r.edit_penalty())};
}

// Paired (in-distribution accuracy, OOD accuracy) points along an
// interpolation curve, ordered by alpha — scatter data for the
// effective-robustness view.
struct RobustnessPoint {
    double id_acc;
    double ood_acc;
    double alpha;
};

inline std::vector<RobustnessPoint> robustness_curve(const CurveTable& sweep,
                                                     const std::string& id_eval,
                                                     const std::string& ood_eval) {
    std::vector<double> alphas;
    for (const auto& row : sweep)
        if (alphas.empty() || alphas.back() != row.alpha) alphas.push_back(row.alpha);
    std::vector<RobustnessPoint> out;
    for (double a : alphas) {
        RobustnessPoint pt{-1.0, -1.0, a};
        for (const auto& row : sweep) {
            if (row.alpha != a) continue;
            if (row.eval_name == id_eval) pt.id_acc = row.accuracy;
            if (row.eval_name == ood_eval) pt.ood_acc = row.accuracy;
        }
        if (pt.id_acc < 0.0)
            throw ContractError("robustness_curve: eval '" + id_eval + "' missing at alpha " +
                                fmt_double(a));
        if (pt.ood_acc < 0.0)
            throw ContractError("robustness_curve: eval '" + ood_eval + "' missing at alpha " +
                                fmt_double(a));
        out.push_back(pt);
    }
    return out;
}

// mean and population standard deviation, for aggregating penalties across
// corruption families at fixed severity
struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

inline MeanStd aggregate(const std::vector<double>& xs) {
    if (xs.empty()) throw ContractError("aggregate: empty");
    MeanStd m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.stddev += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(m.stddev / static_cast<double>(xs.size()));
    return m;
}

}  // namespace editlab
