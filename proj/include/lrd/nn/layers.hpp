#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lrd/core/conv_ops.hpp"
#include "lrd/core/ops.hpp"
#include "lrd/core/tensor.hpp"

namespace lrd {

template <typename S>
struct NamedTensor {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
using TensorList = std::vector<NamedTensor<S>>;

enum class Act { ReLU, Hardswish };

template <typename S>
inline Tensor<S> apply_act(const Tensor<S>& x, Act a) {
    return a == Act::ReLU ? relu(x) : hardswish(x);
}

// torchvision channel rounding used by the SE squeeze width
inline std::int64_t make_divisible(double v, std::int64_t divisor = 8) {
    std::int64_t nv = std::max<std::int64_t>(
        divisor, static_cast<std::int64_t>(v + static_cast<double>(divisor) / 2.0) / divisor * divisor);
    if (static_cast<double>(nv) < 0.9 * v) nv += divisor;
    return nv;
}

template <typename S>
struct Conv2dLayer {
    Tensor<S> weight;
    Tensor<S> bias;  // undefined when bias-less
    std::int64_t stride = 1, padding = 0, groups = 1;

    Conv2dLayer() = default;
    Conv2dLayer(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t stride_, std::int64_t padding_,
                std::int64_t groups_, bool with_bias, Rng& rng)
        : stride(stride_), padding(padding_), groups(groups_) {
        weight = Tensor<S>::zeros({cout, cin / groups_, k, k}, true);
        const double std_dev = std::sqrt(2.0 / (static_cast<double>(cout) * k * k / groups_));
        for (auto& v : weight.values()) v = static_cast<S>(rng.normal(0.0, std_dev));
        if (with_bias) bias = Tensor<S>::zeros({cout}, true);
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, padding, groups);
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        out.push_back({prefix + ".weight", weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct LinearLayer {
    Tensor<S> weight;  // (out, in)
    Tensor<S> bias;

    LinearLayer() = default;
    LinearLayer(std::int64_t in, std::int64_t out, Rng& rng) {
        weight = Tensor<S>::zeros({out, in}, true);
        const double std_dev = std::sqrt(1.0 / static_cast<double>(in));
        for (auto& v : weight.values()) v = static_cast<S>(rng.normal(0.0, std_dev));
        bias = Tensor<S>::zeros({out}, true);
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, &bias); }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct BatchNorm2dLayer {
    Tensor<S> gamma, beta;            // trainable
    Tensor<S> running_mean, running_var;  // buffers
    double eps = 1e-5;
    double momentum = 0.1;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(std::int64_t channels) {
        gamma = Tensor<S>::full({channels}, S(1), true);
        beta = Tensor<S>::zeros({channels}, true);
        running_mean = Tensor<S>::zeros({channels});
        running_var = Tensor<S>::full({channels}, S(1));
    }

    Tensor<S> operator()(const Tensor<S>& x, bool training) {
        if (!training) return batchnorm2d(x, gamma, beta, running_mean, running_var, eps);
        std::vector<S> batch_mean, batch_var;
        Tensor<S> y = batchnorm2d_train(x, gamma, beta, eps, &batch_mean, &batch_var);
        const std::int64_t m = x.dim(0) * x.dim(2) * x.dim(3);
        const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
        for (std::int64_t c = 0; c < gamma.numel(); ++c) {
            running_mean.data()[c] =
                static_cast<S>((1.0 - momentum) * running_mean.data()[c] + momentum * batch_mean[c]);
            running_var.data()[c] =
                static_cast<S>((1.0 - momentum) * running_var.data()[c] + momentum * batch_var[c] * unbias);
        }
        return y;
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
    void collect_buffers(const std::string& prefix, TensorList<S>& out) const {
        out.push_back({prefix + ".running_mean", running_mean});
        out.push_back({prefix + ".running_var", running_var});
    }
};

/// Squeeze-excitation: GAP -> fc1 -> relu -> fc2 -> hardsigmoid -> gate.
template <typename S>
struct SqueezeExcite {
    LinearLayer<S> fc1, fc2;

    SqueezeExcite() = default;
    SqueezeExcite(std::int64_t channels, std::int64_t squeeze, Rng& rng)
        : fc1(channels, squeeze, rng), fc2(squeeze, channels, rng) {}

    Tensor<S> operator()(const Tensor<S>& x) const {
        Tensor<S> s = global_avg_pool(x);
        s = relu(fc1(s));
        s = hardsigmoid(fc2(s));
        return scale_channels(x, s);
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        fc1.collect_params(prefix + ".fc1", out);
        fc2.collect_params(prefix + ".fc2", out);
    }
};

struct BlockSpec {
    std::int64_t kernel;
    std::int64_t expand;
    std::int64_t out;
    bool se;
    Act act;
    std::int64_t stride;
};

/// MobileNetV3 inverted residual block. The expand conv is skipped when the
/// expansion width equals the input width (first block of the small table).
template <typename S>
struct InvertedResidual {
    BlockSpec spec{};
    std::int64_t cin = 0;
    bool has_expand = false, residual = false;
    Conv2dLayer<S> expand_conv, dw_conv, project_conv;
    BatchNorm2dLayer<S> expand_bn, dw_bn, project_bn;
    SqueezeExcite<S> se;

    InvertedResidual() = default;
    InvertedResidual(std::int64_t cin_, const BlockSpec& b, Rng& rng) : spec(b), cin(cin_) {
        has_expand = b.expand != cin_;
        if (has_expand) {
            expand_conv = Conv2dLayer<S>(cin_, b.expand, 1, 1, 0, 1, false, rng);
            expand_bn = BatchNorm2dLayer<S>(b.expand);
        }
        dw_conv = Conv2dLayer<S>(b.expand, b.expand, b.kernel, b.stride, b.kernel / 2, b.expand, false, rng);
        dw_bn = BatchNorm2dLayer<S>(b.expand);
        if (b.se) se = SqueezeExcite<S>(b.expand, make_divisible(static_cast<double>(b.expand) / 4.0), rng);
        project_conv = Conv2dLayer<S>(b.expand, b.out, 1, 1, 0, 1, false, rng);
        project_bn = BatchNorm2dLayer<S>(b.out);
        residual = b.stride == 1 && cin_ == b.out;
    }

    Tensor<S> operator()(const Tensor<S>& x, bool training) {
        Tensor<S> h = x;
        if (has_expand) h = apply_act(expand_bn(expand_conv(h), training), spec.act);
        h = apply_act(dw_bn(dw_conv(h), training), spec.act);
        if (spec.se) h = se(h);
        h = project_bn(project_conv(h), training);
        if (residual) h = add(h, x);
        return h;
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        if (has_expand) {
            expand_conv.collect_params(prefix + ".expand", out);
            expand_bn.collect_params(prefix + ".expand_bn", out);
        }
        dw_conv.collect_params(prefix + ".dw", out);
        dw_bn.collect_params(prefix + ".dw_bn", out);
        if (spec.se) se.collect_params(prefix + ".se", out);
        project_conv.collect_params(prefix + ".project", out);
        project_bn.collect_params(prefix + ".project_bn", out);
    }
    void collect_buffers(const std::string& prefix, TensorList<S>& out) const {
        if (has_expand) expand_bn.collect_buffers(prefix + ".expand_bn", out);
        dw_bn.collect_buffers(prefix + ".dw_bn", out);
        project_bn.collect_buffers(prefix + ".project_bn", out);
    }
};

}  // namespace lrd
