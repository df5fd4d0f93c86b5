#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lrd/core/ops.hpp"
#include "lrd/core/tensor.hpp"

// Convolution and image-geometry ops: cross-correlation conv2d (im2col +
// Eigen GEMM, direct loops for depthwise), pooling, separable Gaussian blur
// with reflect padding, half-pixel-center bilinear resize.

namespace lrd {

namespace detail {

// im2col for one sample: rows = C*k*k, cols = Ho*Wo, zero padding.
template <typename S>
void im2col(const S* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t stride,
            std::int64_t pad, std::int64_t ho, std::int64_t wo, S* col) {
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t kh = 0; kh < k; ++kh)
            for (std::int64_t kw = 0; kw < k; ++kw) {
                S* dst = col + ((ch * k + kh) * k + kw) * ho * wo;
                const S* src = x + ch * h * w;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= h) {
                        std::fill_n(dst + oh * wo, wo, S(0));
                        continue;
                    }
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kw;
                        dst[oh * wo + ow] = (iw < 0 || iw >= w) ? S(0) : src[ih * w + iw];
                    }
                }
            }
}

// scatter-add transpose of im2col
template <typename S>
void col2im_add(const S* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t stride,
                std::int64_t pad, std::int64_t ho, std::int64_t wo, S* x) {
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t kh = 0; kh < k; ++kh)
            for (std::int64_t kw = 0; kw < k; ++kw) {
                const S* src = col + ((ch * k + kh) * k + kw) * ho * wo;
                S* dst = x + ch * h * w;
                for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= h) continue;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        const std::int64_t iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < w) dst[ih * w + iw] += src[oh * wo + ow];
                    }
                }
            }
}

}  // namespace detail

/// Cross-correlation conv2d. x:(N,C,H,W), w:(Co,C/groups,k,k), bias:(Co)
/// optional. H' = floor((H+2p-k)/s)+1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias, std::int64_t stride,
                 std::int64_t padding, std::int64_t groups = 1) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError("conv2d: weight must be (Co,Ci,k,k), got " + shape_str(w.shape()));
    if (stride < 1 || padding < 0 || groups < 1) throw ValueError("conv2d: bad stride/padding/groups");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t co = w.dim(0), cig = w.dim(1), k = w.dim(2);
    if (c % groups != 0 || co % groups != 0)
        throw ShapeError("conv2d: channels " + std::to_string(c) + "/" + std::to_string(co) +
                         " not divisible by groups " + std::to_string(groups));
    if (cig != c / groups)
        throw ShapeError("conv2d: weight in-channels " + std::to_string(cig) + " != C/groups = " +
                         std::to_string(c / groups));
    if (bias && bias->numel() != co)
        throw ShapeError("conv2d: bias length " + std::to_string(bias->numel()) + " != Co " + std::to_string(co));
    const std::int64_t ho = (h + 2 * padding - k) / stride + 1;
    const std::int64_t wo = (wd + 2 * padding - k) / stride + 1;
    if (ho < 1 || wo < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(x.shape()));

    Tensor<S> y = Tensor<S>::zeros({n, co, ho, wo});
    const bool depthwise = (groups == c && cig == 1 && co == c);

    if (depthwise) {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const S* xs = x.data() + (i * c + ch) * h * wd;
                const S* ws = w.data() + ch * k * k;
                S* ys = y.data() + (i * c + ch) * ho * wo;
                const S b = bias ? bias->data()[ch] : S(0);
                for (std::int64_t oh = 0; oh < ho; ++oh)
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                        S acc = b;
                        for (std::int64_t kh = 0; kh < k; ++kh) {
                            const std::int64_t ih = oh * stride - padding + kh;
                            if (ih < 0 || ih >= h) continue;
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                const std::int64_t iw = ow * stride - padding + kw;
                                if (iw < 0 || iw >= wd) continue;
                                acc += ws[kh * k + kw] * xs[ih * wd + iw];
                            }
                        }
                        ys[oh * wo + ow] = acc;
                    }
            }
    } else {
        const std::int64_t cg = c / groups, cog = co / groups, kk = cg * k * k;
        std::vector<S> col(static_cast<std::size_t>(c * k * k * ho * wo));
        for (std::int64_t i = 0; i < n; ++i) {
            detail::im2col(x.data() + i * c * h * wd, c, h, wd, k, stride, padding, ho, wo, col.data());
            for (std::int64_t g = 0; g < groups; ++g) {
                CMapMat<S> wm(w.data() + g * cog * kk, cog, kk);
                CMapMat<S> cm(col.data() + g * kk * ho * wo, kk, ho * wo);
                MapMat<S> ym(y.data() + (i * co + g * cog) * ho * wo, cog, ho * wo);
                ym.noalias() = wm * cm;
            }
            if (bias)
                for (std::int64_t ch = 0; ch < co; ++ch) {
                    S* ys = y.data() + (i * co + ch) * ho * wo;
                    const S b = bias->data()[ch];
                    for (std::int64_t j = 0; j < ho * wo; ++j) ys[j] += b;
                }
        }
    }

    const bool track = bias ? detail::tracing<S>({&x, &w, bias}) : detail::tracing<S>({&x, &w});
    if (track) {
        detail::mark_output(y);
        auto xd = x.node(), wdn = w.node(), yd = y.node();
        auto bd = bias ? bias->node() : nullptr;
        active_tape<S>()->record([xd, wdn, bd, yd, n, c, h, wd, co, k, stride, padding, groups, ho, wo, depthwise] {
            if (bd && detail::wants_grad(bd)) {
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t ch = 0; ch < co; ++ch) {
                        const S* gs = yd->grad.data() + (i * co + ch) * ho * wo;
                        S acc = S(0);
                        for (std::int64_t j = 0; j < ho * wo; ++j) acc += gs[j];
                        bd->grad[ch] += acc;
                    }
            }
            if (depthwise) {
                for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const S* gs = yd->grad.data() + (i * c + ch) * ho * wo;
                        const S* xs = xd->values.data() + (i * c + ch) * h * wd;
                        const S* ws = wdn->values.data() + ch * k * k;
                        S* xg = detail::wants_grad(xd) ? xd->grad.data() + (i * c + ch) * h * wd : nullptr;
                        S* wg = detail::wants_grad(wdn) ? wdn->grad.data() + ch * k * k : nullptr;
                        for (std::int64_t oh = 0; oh < ho; ++oh)
                            for (std::int64_t ow = 0; ow < wo; ++ow) {
                                const S g = gs[oh * wo + ow];
                                if (g == S(0)) continue;
                                for (std::int64_t kh = 0; kh < k; ++kh) {
                                    const std::int64_t ih = oh * stride - padding + kh;
                                    if (ih < 0 || ih >= h) continue;
                                    for (std::int64_t kw = 0; kw < k; ++kw) {
                                        const std::int64_t iw = ow * stride - padding + kw;
                                        if (iw < 0 || iw >= wd) continue;
                                        if (xg) xg[ih * wd + iw] += g * ws[kh * k + kw];
                                        if (wg) wg[kh * k + kw] += g * xs[ih * wd + iw];
                                    }
                                }
                            }
                    }
                return;
            }
            const std::int64_t cg = c / groups, cog = co / groups, kk = cg * k * k;
            std::vector<S> col(static_cast<std::size_t>(c * k * k * ho * wo));
            std::vector<S> dcol(static_cast<std::size_t>(c * k * k * ho * wo));
            for (std::int64_t i = 0; i < n; ++i) {
                detail::im2col(xd->values.data() + i * c * h * wd, c, h, wd, k, stride, padding, ho, wo, col.data());
                for (std::int64_t g = 0; g < groups; ++g) {
                    CMapMat<S> gm(yd->grad.data() + (i * co + g * cog) * ho * wo, cog, ho * wo);
                    if (detail::wants_grad(wdn)) {
                        CMapMat<S> cm(col.data() + g * kk * ho * wo, kk, ho * wo);
                        MapMat<S> wg(wdn->grad.data() + g * cog * kk, cog, kk);
                        wg.noalias() += gm * cm.transpose();
                    }
                    if (detail::wants_grad(xd)) {
                        CMapMat<S> wm(wdn->values.data() + g * cog * kk, cog, kk);
                        MapMat<S> dcm(dcol.data() + g * kk * ho * wo, kk, ho * wo);
                        dcm.noalias() = wm.transpose() * gm;
                    }
                }
                if (detail::wants_grad(xd))
                    detail::col2im_add(dcol.data(), c, h, wd, k, stride, padding, ho, wo,
                                       xd->grad.data() + i * c * h * wd);
            }
        });
    }
    return y;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, std::nullptr_t, std::int64_t stride, std::int64_t padding,
                 std::int64_t groups = 1) {
    return conv2d(x, w, static_cast<const Tensor<S>*>(nullptr), stride, padding, groups);
}

/// (N,C,H,W) -> (N,C) mean over the spatial extent.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<S> y = Tensor<S>::zeros({n, c});
    const S inv = S(1) / static_cast<S>(hw);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* xs = x.data() + (i * c + ch) * hw;
            S acc = S(0);
            for (std::int64_t j = 0; j < hw; ++j) acc += xs[j];
            y.data()[i * c + ch] = acc * inv;
        }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, n, c, hw, inv] {
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S g = yd->grad[i * c + ch] * inv;
                    S* xg = xd->grad.data() + (i * c + ch) * hw;
                    for (std::int64_t j = 0; j < hw; ++j) xg[j] += g;
                }
        });
    }
    return y;
}

/// Non-overlapping mean pooling by an integer factor (H, W divisible).
template <typename S>
Tensor<S> avg_pool(const Tensor<S>& x, std::int64_t factor) {
    if (x.rank() != 4) throw ShapeError("avg_pool: expected NCHW, got " + shape_str(x.shape()));
    if (factor < 1 || x.dim(2) % factor != 0 || x.dim(3) % factor != 0)
        throw ShapeError("avg_pool: spatial dims " + shape_str(x.shape()) + " not divisible by factor " +
                         std::to_string(factor));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t ho = h / factor, wo = w / factor;
    Tensor<S> y = Tensor<S>::zeros({n, c, ho, wo});
    const S inv = S(1) / static_cast<S>(factor * factor);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* xs = x.data() + (i * c + ch) * h * w;
            S* ys = y.data() + (i * c + ch) * ho * wo;
            for (std::int64_t oh = 0; oh < ho; ++oh)
                for (std::int64_t ow = 0; ow < wo; ++ow) {
                    S acc = S(0);
                    for (std::int64_t fh = 0; fh < factor; ++fh)
                        for (std::int64_t fw = 0; fw < factor; ++fw)
                            acc += xs[(oh * factor + fh) * w + ow * factor + fw];
                    ys[oh * wo + ow] = acc * inv;
                }
        }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, n, c, h, w, ho, wo, factor, inv] {
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S* gs = yd->grad.data() + (i * c + ch) * ho * wo;
                    S* xg = xd->grad.data() + (i * c + ch) * h * w;
                    for (std::int64_t oh = 0; oh < ho; ++oh)
                        for (std::int64_t ow = 0; ow < wo; ++ow) {
                            const S g = gs[oh * wo + ow] * inv;
                            for (std::int64_t fh = 0; fh < factor; ++fh)
                                for (std::int64_t fw = 0; fw < factor; ++fw)
                                    xg[(oh * factor + fh) * w + ow * factor + fw] += g;
                        }
                }
        });
    }
    return y;
}

namespace detail {

// symmetric reflection including the edge sample: -1 -> 0, n -> n-1
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

template <typename S>
std::vector<S> gaussian_kernel(double sigma) {
    const std::int64_t r = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<S> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (std::int64_t i = -r; i <= r; ++i) {
        const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = static_cast<S>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<S>(static_cast<double>(v) / sum);
    return k;
}

// 1-d correlation along rows (axis=1) or columns (axis=0) of an h x w plane
template <typename S>
void blur_axis(const S* src, S* dst, std::int64_t h, std::int64_t w, const std::vector<S>& k, int axis) {
    const std::int64_t r = static_cast<std::int64_t>(k.size() / 2);
    if (axis == 1) {
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                S acc = S(0);
                for (std::int64_t t = -r; t <= r; ++t) acc += k[t + r] * src[y * w + reflect_index(x + t, w)];
                dst[y * w + x] = acc;
            }
    } else {
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                S acc = S(0);
                for (std::int64_t t = -r; t <= r; ++t) acc += k[t + r] * src[reflect_index(y + t, h) * w + x];
                dst[y * w + x] = acc;
            }
    }
}

// adjoint of blur_axis: scatter g through the same taps
template <typename S>
void blur_axis_adjoint(const S* g, S* dst, std::int64_t h, std::int64_t w, const std::vector<S>& k, int axis) {
    const std::int64_t r = static_cast<std::int64_t>(k.size() / 2);
    std::fill_n(dst, h * w, S(0));
    if (axis == 1) {
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const S gv = g[y * w + x];
                for (std::int64_t t = -r; t <= r; ++t) dst[y * w + reflect_index(x + t, w)] += k[t + r] * gv;
            }
    } else {
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const S gv = g[y * w + x];
                for (std::int64_t t = -r; t <= r; ++t) dst[reflect_index(y + t, h) * w + x] += k[t + r] * gv;
            }
    }
}

}  // namespace detail

/// Separable Gaussian blur, radius ceil(3*sigma), kernel renormalized to
/// sum 1, reflect padding at borders.
template <typename S>
Tensor<S> gaussian_blur(const Tensor<S>& x, double sigma) {
    if (sigma <= 0) throw ValueError("gaussian_blur: sigma must be > 0");
    if (x.rank() != 4) throw ShapeError("gaussian_blur: expected NCHW, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::vector<S> kernel = detail::gaussian_kernel<S>(sigma);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    std::vector<S> tmp(static_cast<std::size_t>(h * w));
    for (std::int64_t i = 0; i < n * c; ++i) {
        detail::blur_axis(x.data() + i * h * w, tmp.data(), h, w, kernel, 1);
        detail::blur_axis(tmp.data(), y.data() + i * h * w, h, w, kernel, 0);
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, kernel, n, c, h, w] {
            std::vector<S> t1(static_cast<std::size_t>(h * w)), t2(static_cast<std::size_t>(h * w));
            for (std::int64_t i = 0; i < n * c; ++i) {
                detail::blur_axis_adjoint(yd->grad.data() + i * h * w, t1.data(), h, w, kernel, 0);
                detail::blur_axis_adjoint(t1.data(), t2.data(), h, w, kernel, 1);
                S* xg = xd->grad.data() + i * h * w;
                for (std::int64_t j = 0; j < h * w; ++j) xg[j] += t2[j];
            }
        });
    }
    return y;
}

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize: expected NCHW, got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) throw ValueError("bilinear_resize: non-positive target dims");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<S> y = Tensor<S>::zeros({n, c, out_h, out_w});

    // precompute per-axis taps
    struct Tap {
        std::int64_t i0, i1;
        S w0, w1;
    };
    auto make_taps = [](std::int64_t in, std::int64_t out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::int64_t o = 0; o < out; ++o) {
            const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
            const double f = std::floor(src);
            const double frac = src - f;
            std::int64_t i0 = static_cast<std::int64_t>(f);
            std::int64_t i1 = i0 + 1;
            i0 = std::clamp<std::int64_t>(i0, 0, in - 1);
            i1 = std::clamp<std::int64_t>(i1, 0, in - 1);
            taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<S>(1.0 - frac), static_cast<S>(frac)};
        }
        return taps;
    };
    const auto ty = make_taps(h, out_h);
    const auto tx = make_taps(w, out_w);

    for (std::int64_t i = 0; i < n * c; ++i) {
        const S* xs = x.data() + i * h * w;
        S* ys = y.data() + i * out_h * out_w;
        for (std::int64_t oh = 0; oh < out_h; ++oh) {
            const Tap& a = ty[static_cast<std::size_t>(oh)];
            for (std::int64_t ow = 0; ow < out_w; ++ow) {
                const Tap& b = tx[static_cast<std::size_t>(ow)];
                ys[oh * out_w + ow] = a.w0 * (b.w0 * xs[a.i0 * w + b.i0] + b.w1 * xs[a.i0 * w + b.i1]) +
                                      a.w1 * (b.w0 * xs[a.i1 * w + b.i0] + b.w1 * xs[a.i1 * w + b.i1]);
            }
        }
    }
    if (detail::tracing<S>({&x})) {
        detail::mark_output(y);
        auto xd = x.node(), yd = y.node();
        active_tape<S>()->record([xd, yd, ty, tx, n, c, h, w, out_h, out_w] {
            for (std::int64_t i = 0; i < n * c; ++i) {
                const S* gs = yd->grad.data() + i * out_h * out_w;
                S* xg = xd->grad.data() + i * h * w;
                for (std::int64_t oh = 0; oh < out_h; ++oh) {
                    const auto& a = ty[static_cast<std::size_t>(oh)];
                    for (std::int64_t ow = 0; ow < out_w; ++ow) {
                        const auto& b = tx[static_cast<std::size_t>(ow)];
                        const S g = gs[oh * out_w + ow];
                        xg[a.i0 * w + b.i0] += g * a.w0 * b.w0;
                        xg[a.i0 * w + b.i1] += g * a.w0 * b.w1;
                        xg[a.i1 * w + b.i0] += g * a.w1 * b.w0;
                        xg[a.i1 * w + b.i1] += g * a.w1 * b.w1;
                    }
                }
            }
        });
    }
    return y;
}

/// Gate NCHW features by a per-(sample,channel) factor s:(N,C).
template <typename S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& s) {
    if (x.rank() != 4 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
        throw ShapeError("scale_channels: incompatible shapes " + shape_str(x.shape()) + " / " +
                         shape_str(s.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S f = s.data()[i * c + ch];
            const S* xs = x.data() + (i * c + ch) * hw;
            S* ys = y.data() + (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) ys[j] = xs[j] * f;
        }
    if (detail::tracing<S>({&x, &s})) {
        detail::mark_output(y);
        auto xd = x.node(), sd = s.node(), yd = y.node();
        active_tape<S>()->record([xd, sd, yd, n, c, hw] {
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S f = sd->values[i * c + ch];
                    const S* gs = yd->grad.data() + (i * c + ch) * hw;
                    const S* xs = xd->values.data() + (i * c + ch) * hw;
                    S acc = S(0);
                    if (detail::wants_grad(xd)) {
                        S* xg = xd->grad.data() + (i * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            xg[j] += gs[j] * f;
                            acc += gs[j] * xs[j];
                        }
                    } else {
                        for (std::int64_t j = 0; j < hw; ++j) acc += gs[j] * xs[j];
                    }
                    if (detail::wants_grad(sd)) sd->grad[i * c + ch] += acc;
                }
        });
    }
    return y;
}

/// Gate NCHW features by a per-(sample,pixel) map g:(N,1,H,W).
template <typename S>
Tensor<S> scale_spatial(const Tensor<S>& x, const Tensor<S>& g) {
    if (x.rank() != 4 || g.rank() != 4 || g.dim(0) != x.dim(0) || g.dim(1) != 1 || g.dim(2) != x.dim(2) ||
        g.dim(3) != x.dim(3))
        throw ShapeError("scale_spatial: incompatible shapes " + shape_str(x.shape()) + " / " +
                         shape_str(g.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<S> y = Tensor<S>::zeros(x.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const S* gm = g.data() + i * hw;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S* xs = x.data() + (i * c + ch) * hw;
            S* ys = y.data() + (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) ys[j] = xs[j] * gm[j];
        }
    }
    if (detail::tracing<S>({&x, &g})) {
        detail::mark_output(y);
        auto xd = x.node(), gd = g.node(), yd = y.node();
        active_tape<S>()->record([xd, gd, yd, n, c, hw] {
            for (std::int64_t i = 0; i < n; ++i) {
                const S* gm = gd->values.data() + i * hw;
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S* gs = yd->grad.data() + (i * c + ch) * hw;
                    const S* xs = xd->values.data() + (i * c + ch) * hw;
                    if (detail::wants_grad(xd)) {
                        S* xg = xd->grad.data() + (i * c + ch) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) xg[j] += gs[j] * gm[j];
                    }
                    if (detail::wants_grad(gd)) {
                        S* gg = gd->grad.data() + i * hw;
                        for (std::int64_t j = 0; j < hw; ++j) gg[j] += gs[j] * xs[j];
                    }
                }
            }
        });
    }
    return y;
}

}  // namespace lrd
