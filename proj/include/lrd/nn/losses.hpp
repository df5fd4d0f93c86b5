#pragma once

#include <cstdint>
#include <vector>

#include "lrd/core/ops.hpp"
#include "lrd/nn/embedding.hpp"

namespace lrd {

struct LossBreakdown {
    double l_cls = 0.0;
    double l_center = 0.0;
    double l_drift = 0.0;
    double total = 0.0;
    double lambda_c = 0.0;
    double lambda_d = 0.0;
    double margin_m = 0.0;
    double delta = 0.0;
};

namespace detail {
template <typename S>
inline std::vector<std::int64_t> rows_with_label(const std::vector<int>& labels, int wanted) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == wanted) idx.push_back(static_cast<std::int64_t>(i));
    return idx;
}
}  // namespace detail

/// Real-centered margin loss: mean squared distance of real embeddings to c
/// plus mean squared hinge max(0, m - d) over fakes. c is a constant here
/// (no gradient flows into it); embeddings carry gradient. An empty real or
/// fake set contributes 0 for its term; both empty is an error.
template <typename S>
Tensor<S> center_loss(const Tensor<S>& embeddings, const std::vector<int>& labels, const Tensor<S>& c, double m) {
    if (m <= 0) throw ValueError("center_loss: margin must be > 0");
    if (embeddings.rank() != 2 || static_cast<std::size_t>(embeddings.dim(0)) != labels.size())
        throw ShapeError("center_loss: embeddings " + shape_str(embeddings.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const auto real_idx = detail::rows_with_label<S>(labels, 0);
    const auto fake_idx = detail::rows_with_label<S>(labels, 1);
    if (real_idx.empty() && fake_idx.empty()) throw ValueError("center_loss: both real and fake sets empty");

    Tensor<S> loss = Tensor<S>::scalar(S(0));
    if (!real_idx.empty()) {
        Tensor<S> er = gather_rows(embeddings, real_idx);
        Tensor<S> diff = sub_rowvec(er, c);
        Tensor<S> d2 = sum_axis1(mul(diff, diff));
        loss = add(loss, mean_all(d2));
    }
    if (!fake_idx.empty()) {
        Tensor<S> ef = gather_rows(embeddings, fake_idx);
        Tensor<S> diff = sub_rowvec(ef, c);
        Tensor<S> d = sqrt_op(sum_axis1(mul(diff, diff)));
        Tensor<S> hinge = relu(add_scalar(mul_scalar(d, S(-1)), static_cast<S>(m)));
        loss = add(loss, mean_all(mul(hinge, hinge)));
    }
    return loss;
}

/// Prototype drift regularizer: re-derives the EMA candidate
/// normalize(mu*c + (1-mu)*zbar) differentiably through zbar, then applies
/// the hinge max(0, ||cand - c|| - delta). An undefined zbar (no real
/// samples in the batch) yields a constant 0.
template <typename S>
Tensor<S> drift_loss(const Tensor<S>& real_mean, const Tensor<S>& c_stored, double mu, double delta) {
    if (delta < 0) throw ValueError("drift_loss: delta must be >= 0");
    if (!real_mean.defined() || real_mean.numel() == 0) return Tensor<S>::scalar(S(0));
    if (real_mean.shape() != c_stored.shape())
        throw ShapeError("drift_loss: mean " + shape_str(real_mean.shape()) + " vs center " +
                         shape_str(c_stored.shape()));
    Tensor<S> raw = add(mul_scalar(c_stored, static_cast<S>(mu)), mul_scalar(real_mean, S(1) - static_cast<S>(mu)));
    Tensor<S> cand = l2_normalize(raw);
    Tensor<S> diff = sub(cand, c_stored);
    Tensor<S> drift = sqrt_op(sum_all(mul(diff, diff)));
    return relu(add_scalar(drift, static_cast<S>(-delta)));
}

struct LossHyper {
    double lambda_c = 0.5;
    double lambda_d = 0.1;
    double margin_m = 0.8;
    double delta = 0.01;
};

template <typename S>
struct TotalLoss {
    Tensor<S> total;  // scalar, graph-carrying
    LossBreakdown breakdown;
};

/// Composes the three loss terms. Center and drift are skipped while the
/// prototype is uninitialized.
template <typename S>
TotalLoss<S> total_loss(const Tensor<S>& p_fake, const std::vector<int>& labels, const Tensor<S>& embeddings,
                        const RealCenter<S>& center, const LossHyper& hp) {
    TotalLoss<S> out;
    out.breakdown.lambda_c = hp.lambda_c;
    out.breakdown.lambda_d = hp.lambda_d;
    out.breakdown.margin_m = hp.margin_m;
    out.breakdown.delta = hp.delta;

    Tensor<S> l_cls = bce(p_fake, labels);
    out.breakdown.l_cls = static_cast<double>(l_cls.item());
    Tensor<S> total = l_cls;

    if (center.initialized) {
        Tensor<S> l_center = center_loss(embeddings, labels, center.c, hp.margin_m);
        out.breakdown.l_center = static_cast<double>(l_center.item());
        total = add(total, mul_scalar(l_center, static_cast<S>(hp.lambda_c)));

        const auto real_idx = detail::rows_with_label<S>(labels, 0);
        Tensor<S> zbar;
        if (!real_idx.empty()) zbar = mean_axis0(gather_rows(embeddings, real_idx));
        Tensor<S> l_drift = drift_loss(zbar, center.c, static_cast<double>(center.mu), hp.delta);
        out.breakdown.l_drift = static_cast<double>(l_drift.item());
        total = add(total, mul_scalar(l_drift, static_cast<S>(hp.lambda_d)));
    }
    out.total = total;
    out.breakdown.total = static_cast<double>(total.item());
    return out;
}

}  // namespace lrd
