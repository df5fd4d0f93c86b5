#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrd/nn/layers.hpp"
#include "lrd/nn/mswgm.hpp"

namespace lrd {

enum class GateMode { Learned, Identity };

struct ConditioningPoint {
    std::int64_t after_block;        // index into the bneck list
    std::int64_t expected_channels;  // C_i
    std::int64_t expected_resolution;  // H_i at the nominal input size
};

struct BackboneSpec {
    std::int64_t input_size = 224;
    std::int64_t stem_out = 16;
    Act stem_act = Act::Hardswish;
    std::vector<BlockSpec> blocks;
    std::int64_t final_out = 576;
    std::vector<ConditioningPoint> conditioning;
    // The published MobileNetV3-Small classification head (576 -> 1024 ->
    // 1000). It is not on the detection path, but the reference parameter
    // accounting includes it, so full mode keeps the layers.
    bool stock_head = false;
    std::int64_t head_hidden = 1024;
    std::int64_t head_classes = 1000;

    /// Published MobileNetV3-Small table: 11 inverted-residual blocks,
    /// conditioning after the 28x28/24ch group and the 14x14/48ch group.
    static BackboneSpec mobilenet_v3_small(std::int64_t input_size = 224) {
        BackboneSpec s;
        s.input_size = input_size;
        s.stem_out = 16;
        s.blocks = {
            {3, 16, 16, true, Act::ReLU, 2},      {3, 72, 24, false, Act::ReLU, 2},
            {3, 88, 24, false, Act::ReLU, 1},     {5, 96, 40, true, Act::Hardswish, 2},
            {5, 240, 40, true, Act::Hardswish, 1}, {5, 240, 40, true, Act::Hardswish, 1},
            {5, 120, 48, true, Act::Hardswish, 1}, {5, 144, 48, true, Act::Hardswish, 1},
            {5, 288, 96, true, Act::Hardswish, 2}, {5, 576, 96, true, Act::Hardswish, 1},
            {5, 576, 96, true, Act::Hardswish, 1},
        };
        s.final_out = 576;
        s.conditioning = {{2, 24, input_size / 8}, {7, 48, input_size / 16}};
        s.stock_head = true;
        return s;
    }

    /// Width/depth-reduced table for fast gradient and cross-domain tests.
    /// Keeps both conditioning points and the same stage semantics.
    static BackboneSpec micro(std::int64_t input_size = 32) {
        BackboneSpec s;
        s.input_size = input_size;
        s.stem_out = 8;
        s.blocks = {
            {3, 16, 12, false, Act::ReLU, 2},
            {3, 24, 12, true, Act::Hardswish, 1},
            {3, 32, 16, false, Act::Hardswish, 2},
            {3, 48, 16, true, Act::Hardswish, 1},
        };
        s.final_out = 64;
        s.conditioning = {{1, 12, input_size / 4}, {3, 16, input_size / 8}};
        s.stock_head = false;
        return s;
    }
};

/// Frequency-conditioned MobileNetV3 feature extractor. Produces the pooled
/// spatial feature f_s after gating two intermediate stages with the MSWGM
/// guidance signals.
template <typename S>
struct Backbone {
    BackboneSpec spec;
    Conv2dLayer<S> stem;
    BatchNorm2dLayer<S> stem_bn;
    std::vector<InvertedResidual<S>> blocks;
    Conv2dLayer<S> final_conv;
    BatchNorm2dLayer<S> final_bn;
    std::vector<LinearLayer<S>> cond_proj;  // W_c^(i): d_g -> C_i, with bias
    LinearLayer<S> head_fc1, head_fc2;      // stock head, off the detection path

    Backbone() = default;
    Backbone(const BackboneSpec& spec_, std::int64_t d_g, Rng& rng) : spec(spec_) {
        stem = Conv2dLayer<S>(3, spec.stem_out, 3, 2, 1, 1, false, rng);
        stem_bn = BatchNorm2dLayer<S>(spec.stem_out);
        std::int64_t cin = spec.stem_out;
        for (const BlockSpec& b : spec.blocks) {
            blocks.emplace_back(cin, b, rng);
            cin = b.out;
        }
        final_conv = Conv2dLayer<S>(cin, spec.final_out, 1, 1, 0, 1, false, rng);
        final_bn = BatchNorm2dLayer<S>(spec.final_out);
        for (const ConditioningPoint& p : spec.conditioning) {
            if (p.after_block < 0 || p.after_block >= static_cast<std::int64_t>(spec.blocks.size()))
                throw ValueError("backbone: conditioning point out of range");
            cond_proj.emplace_back(d_g, p.expected_channels, rng);
        }
        if (spec.conditioning.size() != 2) throw ValueError("backbone: expected two conditioning points");
        if (spec.stock_head) {
            head_fc1 = LinearLayer<S>(spec.final_out, spec.head_hidden, rng);
            head_fc2 = LinearLayer<S>(spec.head_hidden, spec.head_classes, rng);
        }
    }

    /// Eq.-style conditioning: F * sigmoid(W_c g_c + b) over channels,
    /// times the resized spatial guidance over pixels. Identity mode skips
    /// both gates exactly.
    Tensor<S> condition(const Tensor<S>& f, const GuidanceSignals<S>& gs, std::size_t point,
                        GateMode mode) const {
        if (mode == GateMode::Identity) return f;
        Tensor<S> gate = sigmoid(cond_proj[point](gs.g_c));  // (N, C_i)
        Tensor<S> out = scale_channels(f, gate);
        Tensor<S> g_resized = bilinear_resize(gs.G_s, f.dim(2), f.dim(3));
        return scale_spatial(out, g_resized);
    }

    /// Full pass to the pooled feature f_s: (N, final_out).
    Tensor<S> operator()(const Tensor<S>& x, const GuidanceSignals<S>& gs, bool training,
                         GateMode mode = GateMode::Learned) {
        if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != spec.input_size || x.dim(3) != spec.input_size)
            throw ShapeError("backbone: expected (N,3," + std::to_string(spec.input_size) + "," +
                             std::to_string(spec.input_size) + "), got " + shape_str(x.shape()));
        Tensor<S> h = apply_act(stem_bn(stem(x), training), spec.stem_act);
        std::size_t next_cond = 0;
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            h = blocks[bi](h, training);
            if (next_cond < spec.conditioning.size() &&
                spec.conditioning[next_cond].after_block == static_cast<std::int64_t>(bi)) {
                const ConditioningPoint& p = spec.conditioning[next_cond];
                if (h.dim(1) != p.expected_channels || h.dim(2) != p.expected_resolution ||
                    h.dim(3) != p.expected_resolution)
                    throw ShapeError("backbone: conditioning point " + std::to_string(next_cond) +
                                     " expected (N," + std::to_string(p.expected_channels) + "," +
                                     std::to_string(p.expected_resolution) + "," +
                                     std::to_string(p.expected_resolution) + "), got " + shape_str(h.shape()));
                h = condition(h, gs, next_cond, mode);
                ++next_cond;
            }
        }
        h = hardswish(final_bn(final_conv(h), training));
        return global_avg_pool(h);
    }

    void collect_params(const std::string& prefix, TensorList<S>& out) const {
        stem.collect_params(prefix + ".stem", out);
        stem_bn.collect_params(prefix + ".stem_bn", out);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect_params(prefix + ".block" + std::to_string(i), out);
        final_conv.collect_params(prefix + ".final", out);
        final_bn.collect_params(prefix + ".final_bn", out);
        for (std::size_t i = 0; i < cond_proj.size(); ++i)
            cond_proj[i].collect_params(prefix + ".cond" + std::to_string(i), out);
        if (spec.stock_head) {
            head_fc1.collect_params(prefix + ".head_fc1", out);
            head_fc2.collect_params(prefix + ".head_fc2", out);
        }
    }
    void collect_buffers(const std::string& prefix, TensorList<S>& out) const {
        stem_bn.collect_buffers(prefix + ".stem_bn", out);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect_buffers(prefix + ".block" + std::to_string(i), out);
        final_bn.collect_buffers(prefix + ".final_bn", out);
    }
};

}  // namespace lrd
