#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lrd/nn/layers.hpp"

namespace lrd {

/// Per-scale low/high pairs, per-scale features and attention weights.
template <typename S>
struct ScaleBank {
    std::vector<Tensor<S>> lows, highs;  // (N,3,H,W) each
    std::vector<Tensor<S>> features;     // (N,d_f) each
    Tensor<S> alphas;                    // (N,L)
};

/// Channel guidance logits g_c and spatial guidance map G_s in (0,1).
template <typename S>
struct GuidanceSignals {
    Tensor<S> g_c;  // (N,d_g) pre-sigmoid logits
    Tensor<S> G_s;  // (N,1,H',W')
};

/// Low/high frequency split at each scale: low = blur(x, sigma_l),
/// high = x - low, so low + high reconstructs x exactly.
template <typename S>
std::pair<std::vector<Tensor<S>>, std::vector<Tensor<S>>> decompose(const Tensor<S>& x, std::int64_t levels,
                                                                    const std::vector<double>& sigmas) {
    if (levels < 1) throw ValueError("decompose: L must be >= 1");
    if (static_cast<std::int64_t>(sigmas.size()) != levels)
        throw ValueError("decompose: expected " + std::to_string(levels) + " sigmas, got " +
                         std::to_string(sigmas.size()));
    for (double s : sigmas)
        if (s <= 0) throw ValueError("decompose: sigma must be > 0");
    std::vector<Tensor<S>> lows, highs;
    lows.reserve(levels);
    highs.reserve(levels);
    for (std::int64_t l = 0; l < levels; ++l) {
        lows.push_back(gaussian_blur(x, sigmas[static_cast<std::size_t>(l)]));
        highs.push_back(sub(x, lows.back()));
    }
    return {std::move(lows), std::move(highs)};
}

/// Per-scale encoder phi_l over the 6-channel [low || high] concatenation:
/// conv(6->d_f, k3, s2) -> hardswish -> depthwise conv(k3, s2) -> GAP.
template <typename S>
struct ScaleEncoder {
    Conv2dLayer<S> conv1, conv2;

    ScaleEncoder() = default;
    ScaleEncoder(std::int64_t d_f, Rng& rng)
        : conv1(6, d_f, 3, 2, 1, 1, true, rng), conv2(d_f, d_f, 3, 2, 1, d_f, true, rng) {}

    Tensor<S> operator()(const Tensor<S>& low, const Tensor<S>& high) const {
        if (low.shape() != high.shape())
            throw ShapeError("encode_scale: low " + shape_str(low.shape()) + " vs high " + shape_str(high.shape()));
        Tensor<S> h = concat_channels(low, high);
        h = hardswish(conv1(h));
        h = conv2(h);
        return global_avg_pool(h);
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        conv1.collect_params(prefix + ".conv1", out);
        conv2.collect_params(prefix + ".conv2", out);
    }
};

/// Multi-Scale Wavelet Guidance Module: decompose -> per-scale encoders ->
/// scale attention -> channel guidance logits + spatial guidance map.
template <typename S>
struct Mswgm {
    std::int64_t levels = 3;
    std::vector<double> sigmas{1.0, 2.0, 4.0};
    std::int64_t d_f = 8, d_g = 16;
    std::int64_t gs_size = 28;      // H' = W' of G_s
    std::int64_t pool_factor = 8;   // input_size / gs_size

    std::vector<ScaleEncoder<S>> encoders;
    LinearLayer<S> attention;     // L*d_f -> L
    LinearLayer<S> channel_head;  // d_f -> d_g
    Conv2dLayer<S> spatial1, spatial2;

    Mswgm() = default;
    Mswgm(std::int64_t levels_, std::vector<double> sigmas_, std::int64_t d_f_, std::int64_t d_g_,
          std::int64_t input_size, std::int64_t gs_size_, Rng& rng)
        : levels(levels_), sigmas(std::move(sigmas_)), d_f(d_f_), d_g(d_g_), gs_size(gs_size_) {
        if (input_size % gs_size != 0)
            throw ValueError("mswgm: input size " + std::to_string(input_size) + " not divisible by G_s size " +
                             std::to_string(gs_size));
        pool_factor = input_size / gs_size;
        for (std::int64_t l = 0; l < levels; ++l) encoders.emplace_back(d_f, rng);
        attention = LinearLayer<S>(levels * d_f, levels, rng);
        channel_head = LinearLayer<S>(d_f, d_g, rng);
        spatial1 = Conv2dLayer<S>(3, 4, 3, 1, 1, 1, true, rng);
        spatial2 = Conv2dLayer<S>(4, 1, 3, 1, 1, 1, true, rng);
    }

    /// alphas = Softmax(g([f_0 || ... || f_{L-1}]))
    Tensor<S> scale_attention(const std::vector<Tensor<S>>& features) const {
        if (features.empty()) throw ValueError("scale_attention: empty feature list");
        return softmax(attention(concat_lastdim(features)));
    }

    std::pair<GuidanceSignals<S>, ScaleBank<S>> operator()(const Tensor<S>& x) const {
        if (x.rank() != 4 || x.dim(1) != 3)
            throw ShapeError("mswgm: expected (N,3,H,W), got " + shape_str(x.shape()));
        ScaleBank<S> bank;
        auto [lows, highs] = decompose(x, levels, sigmas);
        bank.lows = lows;
        bank.highs = highs;
        for (std::int64_t l = 0; l < levels; ++l)
            bank.features.push_back(encoders[static_cast<std::size_t>(l)](lows[l], highs[l]));
        bank.alphas = scale_attention(bank.features);

        // attended feature vector u and attended high band
        Tensor<S> u, attended_high;
        for (std::int64_t l = 0; l < levels; ++l) {
            Tensor<S> a_l = select_col(bank.alphas, l);
            Tensor<S> fu = row_scale(bank.features[static_cast<std::size_t>(l)], a_l);
            Tensor<S> hu = sample_scale(highs[static_cast<std::size_t>(l)], a_l);
            u = l == 0 ? fu : add(u, fu);
            attended_high = l == 0 ? hu : add(attended_high, hu);
        }

        GuidanceSignals<S> g;
        g.g_c = channel_head(u);
        Tensor<S> sp = spatial2(hardswish(spatial1(attended_high)));
        g.G_s = sigmoid(avg_pool(sp, pool_factor));
        return {std::move(g), std::move(bank)};
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        for (std::size_t l = 0; l < encoders.size(); ++l)
            encoders[l].collect_params(prefix + ".encoder" + std::to_string(l), out);
        attention.collect_params(prefix + ".attention", out);
        channel_head.collect_params(prefix + ".channel_head", out);
        spatial1.collect_params(prefix + ".spatial1", out);
        spatial2.collect_params(prefix + ".spatial2", out);
    }
};

}  // namespace lrd
