#pragma once

// Shared test utilities: central finite-difference gradient checking and a
// brute-force convolution oracle, independent of the library's backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "editlab/network.hpp"
#include "editlab/tensor.hpp"

namespace testutil {

using editlab::TensorPtr;

// relative error with a floor so near-zero gradients compare absolutely
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central finite differences (h = 1e-5) against the recorded backward pass.
// Returns the maximum relative error over every element of every parameter.
inline double gradcheck(const std::vector<TensorPtr>& params,
                        const std::function<TensorPtr()>& loss_fn, double h = 1e-5) {
    for (const auto& p : params) {
        p->requires_grad = true;
        p->zero_grad();
    }
    editlab::backward(loss_fn());
    std::vector<std::vector<double>> analytic;
    for (const auto& p : params) analytic.push_back(p->grad);

    double worst = 0.0;
    editlab::NoGradGuard ng;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + h;
            const double lp = loss_fn()->data[0];
            p.data[i] = saved - h;
            const double lm = loss_fn()->data[0];
            p.data[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            worst = std::max(worst, rel_err(fd, analytic[pi][i]));
        }
    }
    return worst;
}

// Independent direct six-nested-loop convolution (cross-correlation).
inline TensorPtr conv_oracle(const TensorPtr& x, const TensorPtr& w, int stride, int pad) {
    const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int O = w->shape[0], K = w->shape[2];
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    auto out = editlab::make_tensor({O, Ho, Wo});
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c)
                    for (int u = 0; u < K; ++u)
                        for (int v = 0; v < K; ++v) {
                            const int yi = i * stride + u - pad;
                            const int xj = j * stride + v - pad;
                            if (yi < 0 || yi >= H || xj < 0 || xj >= W) continue;
                            acc += w->data[((static_cast<std::size_t>(o) * C + c) * K + u) * K + v] *
                                   x->data[(static_cast<std::size_t>(c) * H + yi) * W + xj];
                        }
                out->data[(static_cast<std::size_t>(o) * Ho + i) * Wo + j] = acc;
            }
    return out;
}

inline double max_abs_diff(const TensorPtr& a, const TensorPtr& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a->data.size(); ++i)
        m = std::max(m, std::abs(a->data[i] - b->data[i]));
    return m;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// every parameter of two same-architecture networks, flattened
inline std::vector<std::vector<double>> all_params(const editlab::Network& net) {
    std::vector<std::vector<double>> out;
    auto& mut = const_cast<editlab::Network&>(net);
    for (auto& pg : editlab::collect_params(mut)) out.push_back(pg.tensor->data);
    return out;
}

}  // namespace testutil
