#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lrd/core/tensor.hpp"

// Elementwise, reduction, structural and dense-linear ops on Tensor<S>.
// Every op allocates its output, and records a backward closure on the
// active tape when some input requires grad. Backward closures accumulate
// with += into input grad buffers that exist, and skip inputs without one.

namespace lrd {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

namespace detail {

template <typename S>
inline bool tracing(std::initializer_list<const Tensor<S>*> ins) {
    if (!active_tape<S>()) return false;
    for (const Tensor<S>* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

template <typename S>
inline void mark_output(Tensor<S>& y) {
    y.set_requires_grad(true);
}

template <typename S>
inline bool wants_grad(const std::shared_ptr<TensorData<S>>& d) {
    return !d->grad.empty();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    Tensor<S> y = Tensor<S>::zeros(a.shape());
    const S* av = a.data();
    const S* bv = b.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = av[i] + bv[i];
    if (detail::tracing<S>({&a, &b})) {
        detail::mark_output(y);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        active_tape<S>()->record([ad, bd, yd] {
            const std::size_t n = yd->grad.size();
            if (detail::wants_grad(ad))
                for (std::size_t i = 0; i < n; ++i) ad->grad[i] += yd->grad[i];
            if (detail::wants_grad(bd))
                for (std::size_t i = 0; i < n; ++i) bd->grad[i] += yd->grad[i];
        });
    }
    return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<S> y = Tensor<S>::zeros(a.shape());
    const S* av = a.data();
    const S* bv = b.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = av[i] - bv[i];
    if (detail::tracing<S>({&a, &b})) {
        detail::mark_output(y);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        active_tape<S>()->record([ad, bd, yd] {
            const std::size_t n = yd->grad.size();
            if (detail::wants_grad(ad))
                for (std::size_t i = 0; i < n; ++i) ad->grad[i] += yd->grad[i];
            if (detail::wants_grad(bd))
                for (std::size_t i = 0; i < n; ++i) bd->grad[i] -= yd->grad[i];
        });
    }
    return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<S> y = Tensor<S>::zeros(a.shape());
    const S* av = a.data();
    const S* bv = b.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = av[i] * bv[i];
    if (detail::tracing<S>({&a, &b})) {
        detail::mark_output(y);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        active_tape<S>()->record([ad, bd, yd] {
            const std::size_t n = yd->grad.size();
            if (detail::wants_grad(ad))
                for (std::size_t i = 0; i < n; ++i) ad->grad[i] += yd->grad[i] * bd->values[i];
            if (detail::wants_grad(bd))
                for (std::size_t i = 0; i < n; ++i) bd->grad[i] += yd->grad[i] * ad->values[i];
        });
    }
    return y;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = xv[i] + c;
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i) xd->grad[i] += yd->grad[i];
        });
    }
    return y;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = xv[i] * c;
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, c] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i) xd->grad[i] += yd->grad[i] * c;
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// activations

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = xv[i] > S(0) ? xv[i] : S(0);
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i)
                if (xd->values[i] > S(0)) xd->grad[i] += yd->grad[i];
        });
    }
    return y;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) yv[i] = S(1) / (S(1) + std::exp(-xv[i]));
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                const S s = yd->values[i];
                xd->grad[i] += yd->grad[i] * s * (S(1) - s);
            }
        });
    }
    return y;
}

// MobileNetV3 piecewise definitions:
//   hardsigmoid(x) = clamp(x/6 + 1/2, 0, 1), hardswish(x) = x * hardsigmoid(x)

template <typename S>
Tensor<S> hardsigmoid(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const S v = xv[i];
        yv[i] = v <= S(-3) ? S(0) : (v >= S(3) ? S(1) : (v + S(3)) / S(6));
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                const S v = xd->values[i];
                if (v > S(-3) && v < S(3)) xd->grad[i] += yd->grad[i] / S(6);
            }
        });
    }
    return y;
}

template <typename S>
Tensor<S> hardswish(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const S v = xv[i];
        yv[i] = v <= S(-3) ? S(0) : (v >= S(3) ? v : v * (v + S(3)) / S(6));
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                const S v = xd->values[i];
                if (v <= S(-3)) continue;
                const S d = v >= S(3) ? S(1) : (S(2) * v + S(3)) / S(6);
                xd->grad[i] += yd->grad[i] * d;
            }
        });
    }
    return y;
}

template <typename S>
Tensor<S> sqrt_op(const Tensor<S>& x) {
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    const std::int64_t n = y.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (xv[i] < S(0)) throw ValueError("sqrt: negative input");
        yv[i] = std::sqrt(xv[i]);
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            // subgradient 0 at x == 0
            for (std::size_t i = 0; i < yd->grad.size(); ++i)
                if (yd->values[i] != S(0)) xd->grad[i] += yd->grad[i] * S(0.5) / yd->values[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// softmax over the last dimension (strictly positive rows summing to 1)

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: rank-0 input");
    const std::int64_t d = x.shape().back();
    const std::int64_t rows = x.numel() / d;
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    const S* xv = x.data();
    S* yv = y.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xr = xv + r * d;
        S* yr = yv + r * d;
        S mx = xr[0];
        for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        S sum = S(0);
        for (std::int64_t i = 0; i < d; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        for (std::int64_t i = 0; i < d; ++i) yr[i] /= sum;
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, rows, d] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* yr = yd->values.data() + r * d;
                const S* gr = yd->grad.data() + r * d;
                S* xg = xd->grad.data() + r * d;
                S dot = S(0);
                for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
                for (std::int64_t i = 0; i < d; ++i) xg[i] += yr[i] * (gr[i] - dot);
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.values()) acc += v;
    Tensor<S> y = Tensor<S>::scalar(acc);
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd] {
            const S g = yd->grad[0];
            for (std::size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += g;
        });
    }
    return y;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    if (x.numel() == 0) throw ShapeError("mean_all: empty tensor");
    S acc = S(0);
    for (S v : x.values()) acc += v;
    const S inv = S(1) / static_cast<S>(x.numel());
    Tensor<S> y = Tensor<S>::scalar(acc * inv);
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, inv] {
            const S g = yd->grad[0] * inv;
            for (std::size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += g;
        });
    }
    return y;
}

/// (N,D) -> (D), column means.
template <typename S>
Tensor<S> mean_axis0(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("mean_axis0: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    if (n == 0) throw ShapeError("mean_axis0: empty axis");
    Tensor<S> y = Tensor<S>::zeros({d});
    const S* xv = x.data();
    S* yv = y.data();
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) yv[c] += xv[r * d + c];
    const S inv = S(1) / static_cast<S>(n);
    for (std::int64_t c = 0; c < d; ++c) yv[c] *= inv;
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, n, d, inv] {
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < d; ++c) xd->grad[r * d + c] += yd->grad[c] * inv;
        });
    }
    return y;
}

/// (N,D) -> (N), row sums.
template <typename S>
Tensor<S> sum_axis1(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("sum_axis1: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor<S> y = Tensor<S>::zeros({n});
    const S* xv = x.data();
    S* yv = y.data();
    for (std::int64_t r = 0; r < n; ++r) {
        S acc = S(0);
        for (std::int64_t c = 0; c < d; ++c) acc += xv[r * d + c];
        yv[r] = acc;
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, n, d] {
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < d; ++c) xd->grad[r * d + c] += yd->grad[r];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// structural ops

/// Select rows of a (N,D) matrix; used to split batches into real/fake sets.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::int64_t>& idx) {
    if (x.rank() != 2) throw ShapeError("gather_rows: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    for (std::int64_t i : idx)
        if (i < 0 || i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range");
    Tensor<S> y = Tensor<S>::zeros({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(x.data() + idx[r] * d, d, y.data() + static_cast<std::int64_t>(r) * d);
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, idx, d] {
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::int64_t c = 0; c < d; ++c)
                    xd->grad[idx[r] * d + c] += yd->grad[static_cast<std::int64_t>(r) * d + c];
        });
    }
    return y;
}

/// Column j of a (N,D) matrix as a (N) vector.
template <typename S>
Tensor<S> select_col(const Tensor<S>& x, std::int64_t j) {
    if (x.rank() != 2) throw ShapeError("select_col: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    if (j < 0 || j >= d) throw ShapeError("select_col: column out of range");
    Tensor<S> y = Tensor<S>::zeros({n});
    for (std::int64_t r = 0; r < n; ++r) y.data()[r] = x.data()[r * d + j];
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, n, d, j] {
            for (std::int64_t r = 0; r < n; ++r) xd->grad[r * d + j] += yd->grad[r];
        });
    }
    return y;
}

/// Scale each row of (N,D) by s[n].
template <typename S>
Tensor<S> row_scale(const Tensor<S>& x, const Tensor<S>& s) {
    if (x.rank() != 2 || s.rank() != 1 || s.dim(0) != x.dim(0))
        throw ShapeError("row_scale: incompatible shapes " + shape_str(x.shape()) + " / " + shape_str(s.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t r = 0; r < n; ++r) {
        const S f = s.data()[r];
        for (std::int64_t c = 0; c < d; ++c) y.data()[r * d + c] = x.data()[r * d + c] * f;
    }
    if (detail::tracing<S>({&x, &s})) {
        detail::mark_output(y);
        auto xd = x.node(), sd = s.node(), yd = y.node();
        active_tape<S>()->record([xd, sd, yd, n, d] {
            for (std::int64_t r = 0; r < n; ++r) {
                const S f = sd->values[r];
                S acc = S(0);
                for (std::int64_t c = 0; c < d; ++c) {
                    const S g = yd->grad[r * d + c];
                    if (detail::wants_grad(xd)) xd->grad[r * d + c] += g * f;
                    acc += g * xd->values[r * d + c];
                }
                if (detail::wants_grad(sd)) sd->grad[r] += acc;
            }
        });
    }
    return y;
}

/// Scale each sample of (N,C,H,W) by s[n].
template <typename S>
Tensor<S> sample_scale(const Tensor<S>& x, const Tensor<S>& s) {
    if (x.rank() != 4 || s.rank() != 1 || s.dim(0) != x.dim(0))
        throw ShapeError("sample_scale: incompatible shapes " + shape_str(x.shape()) + " / " + shape_str(s.shape()));
    const std::int64_t n = x.dim(0);
    const std::int64_t chw = x.numel() / n;
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t r = 0; r < n; ++r) {
        const S f = s.data()[r];
        for (std::int64_t i = 0; i < chw; ++i) y.data()[r * chw + i] = x.data()[r * chw + i] * f;
    }
    if (detail::tracing<S>({&x, &s})) {
        detail::mark_output(y);
        auto xd = x.node(), sd = s.node(), yd = y.node();
        active_tape<S>()->record([xd, sd, yd, n, chw] {
            for (std::int64_t r = 0; r < n; ++r) {
                const S f = sd->values[r];
                S acc = S(0);
                for (std::int64_t i = 0; i < chw; ++i) {
                    const S g = yd->grad[r * chw + i];
                    if (detail::wants_grad(xd)) xd->grad[r * chw + i] += g * f;
                    acc += g * xd->values[r * chw + i];
                }
                if (detail::wants_grad(sd)) sd->grad[r] += acc;
            }
        });
    }
    return y;
}

/// Subtract a length-D row vector from every row of (N,D).
template <typename S>
Tensor<S> sub_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1))
        throw ShapeError("sub_rowvec: incompatible shapes " + shape_str(x.shape()) + " / " + shape_str(v.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) y.data()[r * d + c] = x.data()[r * d + c] - v.data()[c];
    if (detail::tracing<S>({&x, &v})) {
        detail::mark_output(y);
        auto xd = x.node(), vd = v.node(), yd = y.node();
        active_tape<S>()->record([xd, vd, yd, n, d] {
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < d; ++c) {
                    const S g = yd->grad[r * d + c];
                    if (detail::wants_grad(xd)) xd->grad[r * d + c] += g;
                    if (detail::wants_grad(vd)) vd->grad[c] -= g;
                }
        });
    }
    return y;
}

/// Concatenate rank-2 tensors along the last dimension.
template <typename S>
Tensor<S> concat_lastdim(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat_lastdim: empty input list");
    const std::int64_t n = xs[0].dim(0);
    std::int64_t total = 0;
    for (const auto& x : xs) {
        if (x.rank() != 2 || x.dim(0) != n) throw ShapeError("concat_lastdim: incompatible " + shape_str(x.shape()));
        total += x.dim(1);
    }
    Tensor<S> y = Tensor<S>::zeros({n, total});
    std::int64_t off = 0;
    for (const auto& x : xs) {
        const std::int64_t d = x.dim(1);
        for (std::int64_t r = 0; r < n; ++r) std::copy_n(x.data() + r * d, d, y.data() + r * total + off);
        off += d;
    }
    bool track = false;
    for (const auto& x : xs) track = track || x.requires_grad();
    if (active_tape<S>() && track) {
        detail::mark_output(y);
        std::vector<std::shared_ptr<TensorData<S>>> nodes;
        for (const auto& x : xs) nodes.push_back(x.node());
        auto yd = y.node();
        active_tape<S>()->record([nodes, yd, n, total] {
            std::int64_t off = 0;
            for (const auto& xd : nodes) {
                const std::int64_t d = xd->shape[1];
                if (detail::wants_grad(xd))
                    for (std::int64_t r = 0; r < n; ++r)
                        for (std::int64_t c = 0; c < d; ++c) xd->grad[r * d + c] += yd->grad[r * total + off + c];
                off += d;
            }
        });
    }
    return y;
}

/// Concatenate two NCHW tensors along channels.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " / " +
                         shape_str(b.shape()));
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor<S> y = Tensor<S>::zeros({n, ca + cb, a.dim(2), a.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
        std::copy_n(b.data() + i * cb * hw, cb * hw, y.data() + i * (ca + cb) * hw + ca * hw);
    }
    if (detail::tracing<S>({&a, &b})) {
        detail::mark_output(y);
        auto ad = a.node(), bd = b.node(), yd = y.node();
        active_tape<S>()->record([ad, bd, yd, n, ca, cb, hw] {
            for (std::int64_t i = 0; i < n; ++i) {
                if (detail::wants_grad(ad))
                    for (std::int64_t j = 0; j < ca * hw; ++j)
                        ad->grad[i * ca * hw + j] += yd->grad[i * (ca + cb) * hw + j];
                if (detail::wants_grad(bd))
                    for (std::int64_t j = 0; j < cb * hw; ++j)
                        bd->grad[i * cb * hw + j] += yd->grad[i * (ca + cb) * hw + ca * hw + j];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// dense linear algebra (Eigen GEMM behind the spec contract)

/// y = x W^T + b with x:(N,in), W:(out,in), b:(out) optional.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b = nullptr) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear: incompatible shapes x=" + shape_str(x.shape()) + " W=" + shape_str(w.shape()));
    const std::int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (b && (b->rank() != 1 || b->dim(0) != out))
        throw ShapeError("linear: bias shape " + shape_str(b->shape()) + " != [" + std::to_string(out) + "]");
    Tensor<S> y = Tensor<S>::zeros({n, out});
    {
        CMapMat<S> xm(x.data(), n, in), wm(w.data(), out, in);
        MapMat<S> ym(y.data(), n, out);
        ym.noalias() = xm * wm.transpose();
        if (b)
            for (std::int64_t r = 0; r < n; ++r)
                for (std::int64_t c = 0; c < out; ++c) y.data()[r * out + c] += b->data()[c];
    }
    const bool track = b ? detail::tracing<S>({&x, &w, b}) : detail::tracing<S>({&x, &w});
    if (track) {
        detail::mark_output(y);
        auto xd = x.node(), wd = w.node(), yd = y.node();
        auto bd = b ? b->node() : nullptr;
        active_tape<S>()->record([xd, wd, bd, yd, n, in, out] {
            CMapMat<S> gm(yd->grad.data(), n, out);
            if (detail::wants_grad(xd)) {
                CMapMat<S> wm(wd->values.data(), out, in);
                MapMat<S> xg(xd->grad.data(), n, in);
                xg.noalias() += gm * wm;
            }
            if (detail::wants_grad(wd)) {
                CMapMat<S> xm(xd->values.data(), n, in);
                MapMat<S> wg(wd->grad.data(), out, in);
                wg.noalias() += gm.transpose() * xm;
            }
            if (bd && detail::wants_grad(bd)) {
                for (std::int64_t r = 0; r < n; ++r)
                    for (std::int64_t c = 0; c < out; ++c) bd->grad[c] += yd->grad[r * out + c];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// normalization

/// v / ||v||_2 over the whole tensor (vector semantics).
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& v, double eps_norm = 1e-12) {
    S nrm2 = S(0);
    for (S x : v.values()) nrm2 += x * x;
    const S nrm = std::sqrt(nrm2);
    if (!(static_cast<double>(nrm) > eps_norm)) throw ValueError("l2_normalize: near-zero norm");
    Tensor<S> y = Tensor<S>::zeros(v.shape());
    const S inv = S(1) / nrm;
    for (std::int64_t i = 0; i < v.numel(); ++i) y.data()[i] = v.data()[i] * inv;
    if (detail::tracing<S>({&v})) {
        detail::mark_output(y);
        auto vd = v.node(), yd = y.node();
        active_tape<S>()->record([vd, yd, inv] {
            // J = (I - y y^T) / ||v||
            S dot = S(0);
            for (std::size_t i = 0; i < yd->grad.size(); ++i) dot += yd->grad[i] * yd->values[i];
            for (std::size_t i = 0; i < yd->grad.size(); ++i)
                vd->grad[i] += (yd->grad[i] - yd->values[i] * dot) * inv;
        });
    }
    return y;
}

/// Row-wise l2 normalization of (N,D).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x, double eps_norm = 1e-12) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows: expected rank-2, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), d = x.dim(1);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    std::vector<S> inv(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        S nrm2 = S(0);
        for (std::int64_t c = 0; c < d; ++c) nrm2 += x.data()[r * d + c] * x.data()[r * d + c];
        const S nrm = std::sqrt(nrm2);
        if (!(static_cast<double>(nrm) > eps_norm))
            throw ValueError("l2_normalize_rows: near-zero norm in row " + std::to_string(r));
        inv[static_cast<std::size_t>(r)] = S(1) / nrm;
        for (std::int64_t c = 0; c < d; ++c) y.data()[r * d + c] = x.data()[r * d + c] * inv[r];
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, inv, n, d] {
            for (std::int64_t r = 0; r < n; ++r) {
                S dot = S(0);
                for (std::int64_t c = 0; c < d; ++c) dot += yd->grad[r * d + c] * yd->values[r * d + c];
                for (std::int64_t c = 0; c < d; ++c)
                    xd->grad[r * d + c] += (yd->grad[r * d + c] - yd->values[r * d + c] * dot) * inv[r];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// batch normalization

/// Inference-form batchnorm with explicit statistics (stats are constants).
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, const Tensor<S>& mean,
                      const Tensor<S>& var, double eps) {
    if (eps <= 0) throw ValueError("batchnorm2d: eps must be > 0");
    if (x.rank() != 4) throw ShapeError("batchnorm2d: expected NCHW, got " + shape_str(x.shape()));
    const std::int64_t c = x.dim(1);
    for (const Tensor<S>* t : {&gamma, &beta, &mean, &var})
        if (t->numel() != c)
            throw ShapeError("batchnorm2d: parameter length " + std::to_string(t->numel()) + " != channels " +
                             std::to_string(c));
    const std::int64_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    std::vector<S> invstd(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) invstd[ch] = S(1) / std::sqrt(var.data()[ch] + static_cast<S>(eps));
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S a = gamma.data()[ch] * invstd[ch];
            const S b = beta.data()[ch] - a * mean.data()[ch];
            const S* xs = x.data() + (i * c + ch) * hw;
            S* ys = y.data() + (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) ys[j] = a * xs[j] + b;
        }
    if (detail::tracing<S>({&x, &gamma, &beta})) {
        detail::mark_output(y);
        auto xd = x.node(), gd = gamma.node(), bd = beta.node(), md = mean.node(), yd = y.node();
        active_tape<S>()->record([xd, gd, bd, md, yd, invstd, n, c, hw] {
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S* gs = yd->grad.data() + (i * c + ch) * hw;
                    const S* xs = xd->values.data() + (i * c + ch) * hw;
                    const S a = gd->values[ch] * invstd[ch];
                    if (detail::wants_grad(xd)) {
                        S* xg = xd->grad.data() + (i * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) xg[j] += gs[j] * a;
                    }
                    if (detail::wants_grad(gd)) {
                        S acc = S(0);
                        for (std::int64_t j = 0; j < hw; ++j)
                            acc += gs[j] * (xs[j] - md->values[ch]) * invstd[ch];
                        gd->grad[ch] += acc;
                    }
                    if (detail::wants_grad(bd)) {
                        S acc = S(0);
                        for (std::int64_t j = 0; j < hw; ++j) acc += gs[j];
                        bd->grad[ch] += acc;
                    }
                }
        });
    }
    return y;
}

/// Training-form batchnorm: normalizes with batch statistics and
/// differentiates through them. Biased variance is used for normalization;
/// out_mean/out_var (when given) receive the batch statistics for running
/// updates (out_var biased as well, callers unbias if they need to).
template <typename S>
Tensor<S> batchnorm2d_train(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps,
                            std::vector<S>* out_mean = nullptr, std::vector<S>* out_var = nullptr) {
    if (eps <= 0) throw ValueError("batchnorm2d_train: eps must be > 0");
    if (x.rank() != 4) throw ShapeError("batchnorm2d_train: expected NCHW, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("batchnorm2d_train: affine parameter length");
    const std::int64_t m = n * hw;
    std::vector<S> mean(static_cast<std::size_t>(c), S(0)), var(static_cast<std::size_t>(c), S(0)),
        invstd(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        S acc = S(0);
        for (std::int64_t i = 0; i < n; ++i) {
            const S* xs = x.data() + (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) acc += xs[j];
        }
        mean[ch] = acc / static_cast<S>(m);
        S v = S(0);
        for (std::int64_t i = 0; i < n; ++i) {
            const S* xs = x.data() + (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) {
                const S dlt = xs[j] - mean[ch];
                v += dlt * dlt;
            }
        }
        var[ch] = v / static_cast<S>(m);
        invstd[ch] = S(1) / std::sqrt(var[ch] + static_cast<S>(eps));
    }
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* xs = x.data() + (i * c + ch) * hw;
            S* ys = y.data() + (i * c + ch) * hw;
            const S g = gamma.data()[ch], b = beta.data()[ch], mu = mean[ch], is = invstd[ch];
            for (std::int64_t j = 0; j < hw; ++j) ys[j] = (xs[j] - mu) * is * g + b;
        }
    if (out_mean) *out_mean = mean;
    if (out_var) *out_var = var;
    if (detail::tracing<S>({&x, &gamma, &beta})) {
        detail::mark_output(y);
        auto xd = x.node(), gd = gamma.node(), bd = beta.node(), yd = y.node();
        active_tape<S>()->record([xd, gd, bd, yd, mean, invstd, n, c, hw, m] {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                // accumulate the two inner products over the channel slice
                S sum_g = S(0), sum_gx = S(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    const S* gs = yd->grad.data() + (i * c + ch) * hw;
                    const S* xs = xd->values.data() + (i * c + ch) * hw;
                    for (std::int64_t j = 0; j < hw; ++j) {
                        const S xhat = (xs[j] - mean[ch]) * invstd[ch];
                        sum_g += gs[j];
                        sum_gx += gs[j] * xhat;
                    }
                }
                if (detail::wants_grad(gd)) gd->grad[ch] += sum_gx;
                if (detail::wants_grad(bd)) bd->grad[ch] += sum_g;
                if (detail::wants_grad(xd)) {
                    const S gch = gd->values[ch];
                    const S scale = gch * invstd[ch] / static_cast<S>(m);
                    for (std::int64_t i = 0; i < n; ++i) {
                        const S* gs = yd->grad.data() + (i * c + ch) * hw;
                        const S* xs = xd->values.data() + (i * c + ch) * hw;
                        S* xg = xd->grad.data() + (i * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const S xhat = (xs[j] - mean[ch]) * invstd[ch];
                            xg[j] += scale * (static_cast<S>(m) * gs[j] - sum_g - xhat * sum_gx);
                        }
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// binary cross-entropy on probabilities (Eq. 8 semantics)
// Probabilities are clamped to [1e-7, 1-1e-7]; clamped entries get zero
// gradient (the clamp is part of the op).

template <typename S>
Tensor<S> bce(const Tensor<S>& p, const std::vector<int>& labels) {
    if (p.numel() == 0) throw ShapeError("bce: empty batch");
    if (static_cast<std::size_t>(p.numel()) != labels.size())
        throw ShapeError("bce: " + std::to_string(p.numel()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
    const S lo = S(1e-7), hi = S(1) - S(1e-7);
    const std::int64_t n = p.numel();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const S pc = std::min(hi, std::max(lo, p.data()[i]));
        const S yi = static_cast<S>(labels[static_cast<std::size_t>(i)]);
        acc -= yi * std::log(pc) + (S(1) - yi) * std::log(S(1) - pc);
    }
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
    if (detail::tracing<S>({&p})) {
        detail::mark_output(out);
        auto pd = p.node(), od = out.node();
        active_tape<S>()->record([pd, od, labels, n, lo, hi] {
            const S g = od->grad[0] / static_cast<S>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                const S pv = pd->values[i];
                if (pv < lo || pv > hi) continue;  // clamp region: zero gradient
                const S yi = static_cast<S>(labels[static_cast<std::size_t>(i)]);
                pd->grad[i] += g * (pv - yi) / (pv * (S(1) - pv));
            }
        });
    }
    return out;
}

}  // namespace lrd
