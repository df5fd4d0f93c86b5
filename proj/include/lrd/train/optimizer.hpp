#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lrd/nn/layers.hpp"

namespace lrd {

/// Adaptive-moment gradient descent with L2 weight decay folded into the
/// gradient (classic Adam + L2, not decoupled).
template <typename S>
class Adam {
public:
    Adam() = default;
    Adam(TensorList<S> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), S(0));
            v_.emplace_back(p.tensor.numel(), S(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& w = params_[i].tensor;
            const S* g = w.grad().data();
            S* wv = w.data();
            S* m = m_[i].data();
            S* v = v_[i].data();
            for (std::int64_t j = 0; j < w.numel(); ++j) {
                const double gj = static_cast<double>(g[j]) + weight_decay_ * static_cast<double>(wv[j]);
                const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
                const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                wv[j] -= static_cast<S>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
            }
        }
    }

    std::int64_t t() const { return t_; }
    void set_t(std::int64_t t) { t_ = t; }
    const TensorList<S>& params() const { return params_; }
    std::vector<std::vector<S>>& moment1() { return m_; }
    std::vector<std::vector<S>>& moment2() { return v_; }

private:
    TensorList<S> params_;
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, weight_decay_ = 0.0, eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

}  // namespace lrd
