#pragma once

// Dense 64-bit tensor engine with reverse-mode differentiation, sized for
// desk-scale dense and 2-D convolutional networks. Ops record a tape when
// gradients are enabled; backward(loss) walks it in reverse topological
// order. Leaf gradients accumulate across backward calls until zero_grad.
// Backprop writes only into parents with requires_grad set, so constant
// inputs (cached features, dataset tensors) are never touched.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "editlab/rng.hpp"

namespace editlab {

struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard disabling tape recording (evaluation, feature caching).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // same length as data once materialized
    bool requires_grad = false;

    // tape edges; empty for leaves
    std::vector<TensorPtr> parents;
    std::function<void()> backprop;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), 0.0) {}
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::size_t>(checked_numel(shape)) != data.size())
            throw DimensionError("Tensor: shape/data length mismatch");
    }

    static std::int64_t checked_numel(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw DimensionError("Tensor: shape entries must be positive");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() { grad.assign(data.size(), 0.0); }
    bool has_grad() const { return grad.size() == data.size() && !data.empty(); }
};

inline TensorPtr make_tensor(std::vector<int> shape) {
    return std::make_shared<Tensor>(std::move(shape));
}

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

inline TensorPtr make_scalar(double v) { return make_tensor({1}, {v}); }

inline TensorPtr full_like_shape(std::vector<int> shape, double v) {
    auto t = make_tensor(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), v);
    return t;
}

inline TensorPtr randn_tensor(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    auto t = make_tensor(std::move(shape));
    for (double& v : t->data) v = rng.gaussian(0.0, stddev);
    return t;
}

// Marks a leaf as trainable; allocates its grad buffer.
inline TensorPtr leaf_param(TensorPtr t) {
    t->requires_grad = true;
    t->ensure_grad();
    return t;
}

inline TensorPtr clone_detached(const TensorPtr& t) {
    return make_tensor(t->shape, t->data);
}

namespace detail {

inline bool recording(std::initializer_list<const TensorPtr*> inputs) {
    if (!grad_mode_flag()) return false;
    for (const TensorPtr* p : inputs)
        if ((*p)->requires_grad) return true;
    return false;
}

inline void attach(const TensorPtr& out, std::vector<TensorPtr> parents, std::function<void()> fn) {
    out->requires_grad = true;
    out->ensure_grad();
    out->parents = std::move(parents);
    out->backprop = std::move(fn);
}

// grad sink: non-null only when the parent wants gradients
inline double* sink(Tensor* t) {
    if (!t || !t->requires_grad) return nullptr;
    t->ensure_grad();
    return t->grad.data();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw DimensionError("add: shape mismatch");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (detail::recording({&a, &b})) {
        Tensor *ap = a.get(), *bp = b.get(), *op = out.get();
        detail::attach(out, {a, b}, [ap, bp, op] {
            double* ag = detail::sink(ap);
            double* bg = detail::sink(bp);
            for (std::size_t i = 0; i < op->grad.size(); ++i) {
                if (ag) ag[i] += op->grad[i];
                if (bg) bg[i] += op->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw DimensionError("sub: shape mismatch");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    if (detail::recording({&a, &b})) {
        Tensor *ap = a.get(), *bp = b.get(), *op = out.get();
        detail::attach(out, {a, b}, [ap, bp, op] {
            double* ag = detail::sink(ap);
            double* bg = detail::sink(bp);
            for (std::size_t i = 0; i < op->grad.size(); ++i) {
                if (ag) ag[i] += op->grad[i];
                if (bg) bg[i] -= op->grad[i];
            }
        });
    }
    return out;
}

inline TensorPtr scale(const TensorPtr& x, double c) {
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * x->data[i];
    if (detail::recording({&x})) {
        Tensor *xp = x.get(), *op = out.get();
        detail::attach(out, {x}, [xp, op, c] {
            if (double* xg = detail::sink(xp))
                for (std::size_t i = 0; i < op->grad.size(); ++i) xg[i] += c * op->grad[i];
        });
    }
    return out;
}

inline TensorPtr relu(const TensorPtr& x) {
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    if (detail::recording({&x})) {
        Tensor *xp = x.get(), *op = out.get();
        detail::attach(out, {x}, [xp, op] {
            if (double* xg = detail::sink(xp))
                for (std::size_t i = 0; i < op->grad.size(); ++i)
                    if (xp->data[i] > 0.0) xg[i] += op->grad[i];
        });
    }
    return out;
}

inline TensorPtr flatten(const TensorPtr& x) {
    auto out = make_tensor({static_cast<int>(x->numel())}, x->data);
    if (detail::recording({&x})) {
        Tensor *xp = x.get(), *op = out.get();
        detail::attach(out, {x}, [xp, op] {
            if (double* xg = detail::sink(xp))
                for (std::size_t i = 0; i < op->grad.size(); ++i) xg[i] += op->grad[i];
        });
    }
    return out;
}

// y = W x + b; W is [m,n], x is [n], b is [m]. b may be null.
inline TensorPtr affine(const TensorPtr& W, const TensorPtr& x, const TensorPtr& b) {
    if (W->shape.size() != 2) throw DimensionError("affine: W must be 2-D");
    if (x->shape.size() != 1) throw DimensionError("affine: x must be 1-D");
    const int m = W->shape[0], n = W->shape[1];
    if (x->shape[0] != n)
        throw DimensionError("affine: input axis mismatch: x has " + std::to_string(x->shape[0]) +
                             ", W expects " + std::to_string(n));
    if (b && (b->shape.size() != 1 || b->shape[0] != m))
        throw DimensionError("affine: bias axis mismatch");
    auto out = make_tensor({m});
    for (int i = 0; i < m; ++i) {
        const double* wrow = &W->data[static_cast<std::size_t>(i) * n];
        double acc = b ? b->data[i] : 0.0;
        for (int j = 0; j < n; ++j) acc += wrow[j] * x->data[j];
        out->data[i] = acc;
    }
    bool rec = b ? detail::recording({&W, &x, &b}) : detail::recording({&W, &x});
    if (rec) {
        Tensor *Wp = W.get(), *xp = x.get(), *bp = b ? b.get() : nullptr, *op = out.get();
        std::vector<TensorPtr> ps = b ? std::vector<TensorPtr>{W, x, b} : std::vector<TensorPtr>{W, x};
        detail::attach(out, std::move(ps), [Wp, xp, bp, op, m, n] {
            double* wg = detail::sink(Wp);
            double* xg = detail::sink(xp);
            double* bg = detail::sink(bp);
            for (int i = 0; i < m; ++i) {
                const double g = op->grad[i];
                if (g == 0.0) continue;
                if (wg) {
                    double* wrow = wg + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) wrow[j] += g * xp->data[j];
                }
                if (xg) {
                    const double* wrow = &Wp->data[static_cast<std::size_t>(i) * n];
                    for (int j = 0; j < n; ++j) xg[j] += g * wrow[j];
                }
                if (bg) bg[i] += g;
            }
        });
    }
    return out;
}

// y = A x, A [m,n]
inline TensorPtr matvec(const TensorPtr& A, const TensorPtr& x) {
    return affine(A, x, nullptr);
}

// y = A^T x, A [n,m], x [n]
inline TensorPtr matvec_t(const TensorPtr& A, const TensorPtr& x) {
    if (A->shape.size() != 2 || x->shape.size() != 1) throw DimensionError("matvec_t: bad ranks");
    const int n = A->shape[0], m = A->shape[1];
    if (x->shape[0] != n) throw DimensionError("matvec_t: input axis mismatch");
    auto out = make_tensor({m});
    for (int i = 0; i < n; ++i) {
        const double xi = x->data[i];
        const double* arow = &A->data[static_cast<std::size_t>(i) * m];
        for (int j = 0; j < m; ++j) out->data[j] += arow[j] * xi;
    }
    if (detail::recording({&A, &x})) {
        Tensor *Ap = A.get(), *xp = x.get(), *op = out.get();
        detail::attach(out, {A, x}, [Ap, xp, op, n, m] {
            double* ag = detail::sink(Ap);
            double* xg = detail::sink(xp);
            for (int i = 0; i < n; ++i) {
                const double* arow = &Ap->data[static_cast<std::size_t>(i) * m];
                double xacc = 0.0;
                for (int j = 0; j < m; ++j) {
                    if (ag) ag[static_cast<std::size_t>(i) * m + j] += op->grad[j] * xp->data[i];
                    xacc += arow[j] * op->grad[j];
                }
                if (xg) xg[i] += xacc;
            }
        });
    }
    return out;
}

namespace detail {

inline void check_conv_shapes(const TensorPtr& x, const TensorPtr& w, int stride, int pad,
                              int& C_in, int& H, int& W, int& C_out, int& K, int& Ho, int& Wo) {
    if (x->shape.size() != 3) throw DimensionError("conv2d: input must be [C,H,W]");
    if (w->shape.size() != 4) throw DimensionError("conv2d: kernel must be [C_out,C_in,K,K]");
    C_in = x->shape[0];
    H = x->shape[1];
    W = x->shape[2];
    C_out = w->shape[0];
    K = w->shape[2];
    if (w->shape[1] != C_in)
        throw DimensionError("conv2d: channel axis mismatch: x has C=" + std::to_string(C_in) +
                             ", kernel expects C_in=" + std::to_string(w->shape[1]));
    if (w->shape[3] != K) throw DimensionError("conv2d: kernel must be square");
    if (K % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
    if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
    if (pad < 0) throw DimensionError("conv2d: pad must be >= 0");
    int hn = H + 2 * pad - K, wn = W + 2 * pad - K;
    if (hn < 0 || hn % stride != 0)
        throw DimensionError("conv2d: non-integral output height for H=" + std::to_string(H));
    if (wn < 0 || wn % stride != 0)
        throw DimensionError("conv2d: non-integral output width for W=" + std::to_string(W));
    Ho = hn / stride + 1;
    Wo = wn / stride + 1;
}

}  // namespace detail

// Cross-correlation (no kernel flip): out[o,i,j] = sum_{c,u,v} w[o,c,u,v] * x[c, i*s+u-p, j*s+v-p].
inline TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, int stride, int pad) {
    int C_in, H, W, C_out, K, Ho, Wo;
    detail::check_conv_shapes(x, w, stride, pad, C_in, H, W, C_out, K, Ho, Wo);
    auto out = make_tensor({C_out, Ho, Wo});
    for (int o = 0; o < C_out; ++o) {
        double* orow = &out->data[static_cast<std::size_t>(o) * Ho * Wo];
        for (int c = 0; c < C_in; ++c) {
            const double* xch = &x->data[static_cast<std::size_t>(c) * H * W];
            const double* wk = &w->data[(static_cast<std::size_t>(o) * C_in + c) * K * K];
            for (int u = 0; u < K; ++u) {
                for (int v = 0; v < K; ++v) {
                    const double wv = wk[u * K + v];
                    if (wv == 0.0) continue;
                    for (int i = 0; i < Ho; ++i) {
                        const int xi = i * stride + u - pad;
                        if (xi < 0 || xi >= H) continue;
                        const double* xrow = &xch[static_cast<std::size_t>(xi) * W];
                        double* out_ij = &orow[static_cast<std::size_t>(i) * Wo];
                        for (int j = 0; j < Wo; ++j) {
                            const int xj = j * stride + v - pad;
                            if (xj < 0 || xj >= W) continue;
                            out_ij[j] += wv * xrow[xj];
                        }
                    }
                }
            }
        }
    }
    if (detail::recording({&x, &w})) {
        Tensor *xp = x.get(), *wp = w.get(), *op = out.get();
        detail::attach(out, {x, w}, [xp, wp, op, C_in, H, W, C_out, K, Ho, Wo, stride, pad] {
            double* xgrad = detail::sink(xp);
            double* wgrad = detail::sink(wp);
            for (int o = 0; o < C_out; ++o) {
                const double* grow = &op->grad[static_cast<std::size_t>(o) * Ho * Wo];
                for (int c = 0; c < C_in; ++c) {
                    const double* xch = &xp->data[static_cast<std::size_t>(c) * H * W];
                    double* xg = xgrad ? xgrad + static_cast<std::size_t>(c) * H * W : nullptr;
                    const double* wk = &wp->data[(static_cast<std::size_t>(o) * C_in + c) * K * K];
                    double* wg = wgrad ? wgrad + (static_cast<std::size_t>(o) * C_in + c) * K * K
                                       : nullptr;
                    for (int u = 0; u < K; ++u) {
                        for (int v = 0; v < K; ++v) {
                            const double wv = wk[u * K + v];
                            double wacc = 0.0;
                            for (int i = 0; i < Ho; ++i) {
                                const int xi = i * stride + u - pad;
                                if (xi < 0 || xi >= H) continue;
                                const double* xrow = &xch[static_cast<std::size_t>(xi) * W];
                                double* xgrow = xg ? xg + static_cast<std::size_t>(xi) * W : nullptr;
                                const double* g_ij = &grow[static_cast<std::size_t>(i) * Wo];
                                for (int j = 0; j < Wo; ++j) {
                                    const int xj = j * stride + v - pad;
                                    if (xj < 0 || xj >= W) continue;
                                    const double g = g_ij[j];
                                    if (wg) wacc += g * xrow[xj];
                                    if (xgrow) xgrow[xj] += g * wv;
                                }
                            }
                            if (wg) wg[u * K + v] += wacc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// out[o,i,j] = x[o,i,j] + b[o]
inline TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& b) {
    if (x->shape.size() != 3 || b->shape.size() != 1 || b->shape[0] != x->shape[0])
        throw DimensionError("add_channel_bias: channel axis mismatch");
    const int C = x->shape[0];
    const std::size_t hw = static_cast<std::size_t>(x->shape[1]) * x->shape[2];
    auto out = make_tensor(x->shape);
    for (int c = 0; c < C; ++c) {
        const double bc = b->data[c];
        for (std::size_t k = 0; k < hw; ++k) out->data[c * hw + k] = x->data[c * hw + k] + bc;
    }
    if (detail::recording({&x, &b})) {
        Tensor *xp = x.get(), *bp = b.get(), *op = out.get();
        detail::attach(out, {x, b}, [xp, bp, op, C, hw] {
            double* xg = detail::sink(xp);
            double* bg = detail::sink(bp);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < hw; ++k) {
                    const double g = op->grad[c * hw + k];
                    if (xg) xg[c * hw + k] += g;
                    acc += g;
                }
                if (bg) bg[c] += acc;
            }
        });
    }
    return out;
}

// Applies a channel-mixing matrix at every spatial position, with stride and
// a source offset: out[o,i,j] = sum_c M[o,c] * x[c, i*stride+offset, j*stride+offset].
// transposed=true reads M as [C,O] applied transposed. With stride=1,
// offset=0 this is a plain 1x1 convolution; the offset/out_hw variant matches
// the sampling grid of a K x K convolution whose kernel is zero outside the
// center.
inline TensorPtr channel_linear(const TensorPtr& x, const TensorPtr& M, int stride, int offset,
                                bool transposed = false, int out_h = -1, int out_w = -1) {
    if (x->shape.size() != 3 || M->shape.size() != 2) throw DimensionError("channel_linear: bad ranks");
    const int C = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int O = transposed ? M->shape[1] : M->shape[0];
    const int Cm = transposed ? M->shape[0] : M->shape[1];
    if (Cm != C) throw DimensionError("channel_linear: channel axis mismatch");
    if (stride < 1 || offset < 0) throw DimensionError("channel_linear: bad stride/offset");
    const int Ho = out_h > 0 ? out_h : (H - 1 - offset) / stride + 1;
    const int Wo = out_w > 0 ? out_w : (W - 1 - offset) / stride + 1;
    if (Ho < 1 || Wo < 1) throw DimensionError("channel_linear: empty output");
    if ((Ho - 1) * stride + offset >= H || (Wo - 1) * stride + offset >= W)
        throw DimensionError("channel_linear: sampling grid exceeds input");
    auto out = make_tensor({O, Ho, Wo});
    auto mat = [&](int o, int c) -> double {
        return transposed ? M->data[static_cast<std::size_t>(c) * O + o]
                          : M->data[static_cast<std::size_t>(o) * C + c];
    };
    for (int o = 0; o < O; ++o)
        for (int c = 0; c < C; ++c) {
            const double m = mat(o, c);
            if (m == 0.0) continue;
            const double* xch = &x->data[static_cast<std::size_t>(c) * H * W];
            double* orow = &out->data[static_cast<std::size_t>(o) * Ho * Wo];
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j)
                    orow[i * Wo + j] += m * xch[static_cast<std::size_t>(i * stride + offset) * W +
                                                (j * stride + offset)];
        }
    if (detail::recording({&x, &M})) {
        Tensor *xp = x.get(), *Mp = M.get(), *op = out.get();
        detail::attach(out, {x, M}, [xp, Mp, op, C, H, W, O, Ho, Wo, stride, offset, transposed] {
            double* xg = detail::sink(xp);
            double* mg = detail::sink(Mp);
            for (int o = 0; o < O; ++o) {
                const double* grow = &op->grad[static_cast<std::size_t>(o) * Ho * Wo];
                for (int c = 0; c < C; ++c) {
                    const std::size_t midx = transposed ? static_cast<std::size_t>(c) * O + o
                                                        : static_cast<std::size_t>(o) * C + c;
                    const double m = Mp->data[midx];
                    const double* xch = &xp->data[static_cast<std::size_t>(c) * H * W];
                    double* xgc = xg ? xg + static_cast<std::size_t>(c) * H * W : nullptr;
                    double macc = 0.0;
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) {
                            const double g = grow[i * Wo + j];
                            const std::size_t xi = static_cast<std::size_t>(i * stride + offset) * W +
                                                   (j * stride + offset);
                            macc += g * xch[xi];
                            if (xgc) xgc[xi] += g * m;
                        }
                    if (mg) mg[midx] += macc;
                }
            }
        });
    }
    return out;
}

// Per-channel affine normalization with frozen statistics:
// y[c,...] = gamma[c] * (x[c,...] - mean[c]) / sqrt(var[c] + eps) + beta[c].
// mean/var are plain constants, never part of the tape. Works on [C,H,W]
// (channel axis 0) and on flat [n] features (n channels of size 1).
inline constexpr double kFrozenNormEps = 1e-5;

inline TensorPtr frozen_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                             const std::vector<double>& mean, const std::vector<double>& var) {
    const int C = x->shape[0];
    if (gamma->numel() != C || beta->numel() != C || static_cast<int>(mean.size()) != C ||
        static_cast<int>(var.size()) != C)
        throw DimensionError("frozen_norm: channel axis mismatch");
    const std::size_t hw = x->data.size() / static_cast<std::size_t>(C);
    auto out = make_tensor(x->shape);
    std::vector<double> inv(C);
    for (int c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + kFrozenNormEps);
    for (int c = 0; c < C; ++c) {
        const double g = gamma->data[c], b = beta->data[c], mu = mean[c], iv = inv[c];
        for (std::size_t k = 0; k < hw; ++k)
            out->data[c * hw + k] = g * (x->data[c * hw + k] - mu) * iv + b;
    }
    if (detail::recording({&x, &gamma, &beta})) {
        Tensor *xp = x.get(), *gp = gamma.get(), *bp = beta.get(), *op = out.get();
        detail::attach(out, {x, gamma, beta}, [xp, gp, bp, op, C, hw, mean, inv] {
            double* xg = detail::sink(xp);
            double* gg = detail::sink(gp);
            double* bg = detail::sink(bp);
            for (int c = 0; c < C; ++c) {
                const double g = gp->data[c], mu = mean[c], iv = inv[c];
                double gacc = 0.0, bacc = 0.0;
                for (std::size_t k = 0; k < hw; ++k) {
                    const double go = op->grad[c * hw + k];
                    if (xg) xg[c * hw + k] += go * g * iv;
                    gacc += go * (xp->data[c * hw + k] - mu) * iv;
                    bacc += go;
                }
                if (gg) gg[c] += gacc;
                if (bg) bg[c] += bacc;
            }
        });
    }
    return out;
}

inline TensorPtr sum(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    auto out = make_scalar(acc);
    if (detail::recording({&x})) {
        Tensor *xp = x.get(), *op = out.get();
        detail::attach(out, {x}, [xp, op] {
            if (double* xg = detail::sink(xp)) {
                const double g = op->grad[0];
                for (std::size_t i = 0; i < xp->data.size(); ++i) xg[i] += g;
            }
        });
    }
    return out;
}

inline TensorPtr sum_squares(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v * v;
    auto out = make_scalar(acc);
    if (detail::recording({&x})) {
        Tensor *xp = x.get(), *op = out.get();
        detail::attach(out, {x}, [xp, op] {
            if (double* xg = detail::sink(xp)) {
                const double g = op->grad[0];
                for (std::size_t i = 0; i < xp->data.size(); ++i) xg[i] += 2.0 * g * xp->data[i];
            }
        });
    }
    return out;
}

// -log softmax(z)[label], numerically stable
inline TensorPtr cross_entropy_logits(const TensorPtr& z, int label) {
    if (z->shape.size() != 1) throw DimensionError("cross_entropy_logits: logits must be 1-D");
    const int C = z->shape[0];
    if (label < 0 || label >= C)
        throw ContractError("cross_entropy_logits: label " + std::to_string(label) +
                            " out of range [0," + std::to_string(C) + ")");
    double zmax = z->data[0];
    for (int i = 1; i < C; ++i) zmax = std::max(zmax, z->data[i]);
    double lse = 0.0;
    for (int i = 0; i < C; ++i) lse += std::exp(z->data[i] - zmax);
    lse = std::log(lse) + zmax;
    auto out = make_scalar(lse - z->data[label]);
    if (detail::recording({&z})) {
        Tensor *zp = z.get(), *op = out.get();
        detail::attach(out, {z}, [zp, op, label, lse, C] {
            if (double* zg = detail::sink(zp)) {
                const double g = op->grad[0];
                for (int i = 0; i < C; ++i) {
                    double p = std::exp(zp->data[i] - lse);
                    zg[i] += g * (p - (i == label ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reverse pass
// ---------------------------------------------------------------------------

// Populates grads of all leaves reachable from `loss`. Leaf grads accumulate
// across calls (zero_grad to reset); interior-node grads are reset per call.
inline void backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) throw ContractError("backward: loss must be a scalar");
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // interior nodes get fresh grads so repeated backward calls stay additive on leaves
    for (Tensor* t : order)
        if (t->backprop) t->zero_grad();
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

}  // namespace editlab
