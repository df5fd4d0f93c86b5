#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrd/nn/backbone.hpp"
#include "lrd/nn/embedding.hpp"
#include "lrd/nn/losses.hpp"
#include "lrd/nn/mswgm.hpp"

namespace lrd {

enum class ModelMode { Full, Micro };

struct ModelConfig {
    ModelMode mode = ModelMode::Full;
    std::int64_t input_size = 224;
    std::int64_t levels = 3;
    std::vector<double> sigmas{1.0, 2.0, 4.0};
    std::int64_t d_f = 8;
    std::int64_t d_g = 16;
    std::int64_t d_e = 64;
    std::int64_t proj_hidden = 128;
    double mu = 0.99;
    LossHyper loss;
    // optimizer
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-5;
    std::int64_t batch_size = 16;
    std::int64_t epochs = 10;
    std::uint64_t seed = 42;

    static ModelConfig full() { return ModelConfig{}; }

    static ModelConfig micro(std::int64_t input_size = 32) {
        ModelConfig c;
        c.mode = ModelMode::Micro;
        c.input_size = input_size;
        c.d_e = 16;
        c.proj_hidden = 32;
        return c;
    }

    BackboneSpec backbone_spec() const {
        return mode == ModelMode::Full ? BackboneSpec::mobilenet_v3_small(input_size)
                                       : BackboneSpec::micro(input_size);
    }

    void validate() const {
        if (input_size < 16 || input_size % 8 != 0)
            throw ValueError("config: input_size must be a multiple of 8 and >= 16");
        if (mode == ModelMode::Full && input_size != 224) throw ValueError("config: full mode requires 224 input");
        if (mode == ModelMode::Full && d_e != 64) throw ValueError("config: d_e is fixed to 64 in full mode");
        if (levels < 1 || static_cast<std::int64_t>(sigmas.size()) != levels)
            throw ValueError("config: sigmas must have L entries");
        for (double s : sigmas)
            if (s <= 0) throw ValueError("config: sigmas must be positive");
        if (d_f < 1 || d_g < 1 || d_e < 1 || proj_hidden < 1) throw ValueError("config: dims must be positive");
        if (!(mu > 0 && mu < 1)) throw ValueError("config: mu must lie in (0,1)");
        if (loss.lambda_c < 0 || loss.lambda_d < 0 || loss.margin_m <= 0 || loss.delta < 0)
            throw ValueError("config: loss hyperparameters out of range");
        if (lr <= 0 || batch_size < 1 || epochs < 1) throw ValueError("config: optimizer settings out of range");
    }
};

/// The full detector: MSWGM guidance, conditioned backbone, projection to
/// the unit sphere and the two-logit classifier.
template <typename S>
struct LrdNet {
    ModelConfig cfg;
    Mswgm<S> mswgm;
    Backbone<S> backbone;
    ProjectionHead<S> proj;
    Classifier<S> cls;

    explicit LrdNet(const ModelConfig& cfg_) : cfg(cfg_) {
        cfg.validate();
        Rng rng(cfg.seed);
        BackboneSpec bs = cfg.backbone_spec();
        const std::int64_t gs_size = bs.conditioning.front().expected_resolution;
        mswgm = Mswgm<S>(cfg.levels, cfg.sigmas, cfg.d_f, cfg.d_g, cfg.input_size, gs_size, rng);
        backbone = Backbone<S>(bs, cfg.d_g, rng);
        proj = ProjectionHead<S>(bs.final_out, cfg.proj_hidden, cfg.d_e, rng);
        cls = Classifier<S>(cfg.d_e, rng);
    }

    struct ForwardResult {
        GuidanceSignals<S> guidance;
        ScaleBank<S> bank;
        Tensor<S> f_s;     // (N, final_out)
        Tensor<S> z;       // (N, d_e) unit rows
        Tensor<S> logits;  // (N, 2)
        Tensor<S> p_fake;  // (N)
    };

    /// pixels01: (N,3,H,W) in [0,1]; normalized internally to ~[-1,1].
    ForwardResult forward(const Tensor<S>& pixels01, bool training, GateMode mode = GateMode::Learned) {
        Tensor<S> x = mul_scalar(add_scalar(pixels01, S(-0.5)), S(2));
        ForwardResult r;
        auto [g, bank] = mswgm(x);
        r.guidance = g;
        r.bank = bank;
        r.f_s = backbone(x, r.guidance, training, mode);
        r.z = proj(r.f_s);
        auto co = cls(r.z);
        r.logits = co.logits;
        r.p_fake = co.p_fake;
        return r;
    }

    TensorList<S> parameters() const {
        TensorList<S> out;
        mswgm.collect_params("mswgm", out);
        backbone.collect_params("backbone", out);
        proj.collect_params("proj", out);
        cls.collect_params("cls", out);
        return out;
    }

    TensorList<S> buffers() const {
        TensorList<S> out;
        backbone.collect_buffers("backbone", out);
        return out;
    }
};

}  // namespace lrd
