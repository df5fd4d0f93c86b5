#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrd/nn/layers.hpp"

namespace lrd {

/// psi: linear(d_in -> d_hidden) -> hardswish -> linear(d_hidden -> d_e),
/// followed by row-wise l2 normalization. Full mode is 576 -> 128 -> 64,
/// whose parameter count is exactly 82,112.
template <typename S>
struct ProjectionHead {
    LinearLayer<S> fc1, fc2;

    ProjectionHead() = default;
    ProjectionHead(std::int64_t d_in, std::int64_t d_hidden, std::int64_t d_e, Rng& rng)
        : fc1(d_in, d_hidden, rng), fc2(d_hidden, d_e, rng) {}

    Tensor<S> operator()(const Tensor<S>& f_s) const {
        check_finite(f_s, "projection input");
        return l2_normalize_rows(fc2(hardswish(fc1(f_s))));
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        fc1.collect_params(prefix + ".fc1", out);
        fc2.collect_params(prefix + ".fc2", out);
    }
};

/// Two-logit linear classifier on z; p_fake is the softmax mass on index 1.
template <typename S>
struct Classifier {
    LinearLayer<S> fc;

    Classifier() = default;
    Classifier(std::int64_t d_e, Rng& rng) : fc(d_e, 2, rng) {}

    struct Output {
        Tensor<S> logits;  // (N,2)
        Tensor<S> p_fake;  // (N)
    };

    Output operator()(const Tensor<S>& z) const {
        Output out;
        out.logits = fc(z);
        out.p_fake = select_col(softmax(out.logits), 1);
        return out;
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        fc.collect_params(prefix + ".fc", out);
    }
};

/// EMA prototype of real-sample embeddings. The stored vectors carry no
/// gradient; losses treat c as a constant (the drift loss re-derives its own
/// differentiable candidate).
template <typename S>
struct RealCenter {
    Tensor<S> c;       // unit vector once initialized
    Tensor<S> c_prev;
    S mu = S(0.99);
    std::int64_t step = 0;
    S last_drift = S(0);
    bool initialized = false;

    explicit RealCenter(std::int64_t d_e = 64, double mu_ = 0.99) : mu(static_cast<S>(mu_)) {
        c = Tensor<S>::zeros({d_e});
        c_prev = Tensor<S>::zeros({d_e});
    }
};

/// Eq.-(6) update from the current batch's real embeddings (rows already
/// l2-normalized, values detached). Empty input is a bitwise no-op. The
/// first real batch initializes c directly to the normalized batch mean;
/// subsequent calls blend with momentum and re-normalize.
template <typename S>
void ema_update(RealCenter<S>& center, const Tensor<S>& real_embeddings) {
    if (!real_embeddings.defined() || real_embeddings.numel() == 0 || real_embeddings.dim(0) == 0) return;
    if (real_embeddings.rank() != 2 || real_embeddings.dim(1) != center.c.numel())
        throw ShapeError("ema_update: embeddings " + shape_str(real_embeddings.shape()) + " vs center dim " +
                         std::to_string(center.c.numel()));
    check_finite(real_embeddings, "ema_update embeddings");
    const std::int64_t r = real_embeddings.dim(0), d = center.c.numel();
    std::vector<S> zbar(static_cast<std::size_t>(d), S(0));
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < d; ++j) zbar[j] += real_embeddings.data()[i * d + j];
    for (std::int64_t j = 0; j < d; ++j) zbar[j] /= static_cast<S>(r);

    std::vector<S> raw(static_cast<std::size_t>(d));
    if (!center.initialized) {
        raw = zbar;
    } else {
        for (std::int64_t j = 0; j < d; ++j) raw[j] = center.mu * center.c.data()[j] + (S(1) - center.mu) * zbar[j];
    }
    double nrm2 = 0.0;
    for (S v : raw) nrm2 += static_cast<double>(v) * static_cast<double>(v);
    const double nrm = std::sqrt(nrm2);
    if (!(nrm > 1e-12)) throw ValueError("ema_update: degenerate (near-zero) center candidate");

    Tensor<S> c_new = Tensor<S>::zeros({d});
    for (std::int64_t j = 0; j < d; ++j) c_new.data()[j] = static_cast<S>(raw[j] / nrm);

    double drift2 = 0.0;
    if (center.initialized)
        for (std::int64_t j = 0; j < d; ++j) {
            const double dd = static_cast<double>(c_new.data()[j]) - static_cast<double>(center.c.data()[j]);
            drift2 += dd * dd;
        }
    center.c_prev = center.initialized ? center.c : c_new.detached_copy();
    center.last_drift = static_cast<S>(std::sqrt(drift2));
    center.c = c_new;
    center.step += 1;
    center.initialized = true;
}

}  // namespace lrd
