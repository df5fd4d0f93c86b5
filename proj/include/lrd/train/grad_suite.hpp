#pragma once

#include <cstdint>
#include <vector>

#include "lrd/core/grad_check.hpp"
#include "lrd/data/dataset.hpp"
#include "lrd/nn/model.hpp"

namespace lrd {

struct GradSuiteResult {
    double max_rel = 0.0;
    std::vector<double> per_seed;
};

struct GradSuiteOptions {
    int n_seeds = 10;
    std::int64_t coords_per_tensor = 12;
    std::int64_t input_size = 32;
    double eps = 1e-5;
};

/// Finite-difference check of the full objective (classification + center +
/// drift) through MSWGM, both conditioning points, the projection head and
/// the drift recomputation, on the 64-bit micro model with a 2-sample
/// batch (one real, one fake). The margin is widened to 1.8 and delta set
/// to 0 so both hinge paths carry gradient away from their kinks.
inline GradSuiteResult run_model_grad_suite(const GradSuiteOptions& opt = {}) {
    GradSuiteResult result;
    for (int si = 0; si < opt.n_seeds; ++si) {
        const std::uint64_t seed = 1000 + 17 * static_cast<std::uint64_t>(si);
        ModelConfig cfg = ModelConfig::micro(opt.input_size);
        cfg.seed = seed;
        cfg.loss.margin_m = 1.8;
        cfg.loss.delta = 0.0;
        LrdNet<double> model(cfg);

        RealCenter<double> center(cfg.d_e, cfg.mu);
        {
            Rng crng(mix_seed(seed, 0xCE));
            for (auto& v : center.c.values()) v = crng.normal(0.0, 1.0);
            double nrm = 0.0;
            for (double v : center.c.values()) nrm += v * v;
            nrm = std::sqrt(nrm);
            for (auto& v : center.c.values()) v /= nrm;
            center.c_prev = center.c.detached_copy();
            center.initialized = true;
            center.step = 1;
        }

        Rng drng(mix_seed(seed, 0xDA7A));
        Tensor<double> batch = Tensor<double>::zeros({2, 3, opt.input_size, opt.input_size});
        for (auto& v : batch.values()) v = drng.uniform(0.05, 0.95);
        batch.set_requires_grad(true);
        const std::vector<int> labels = {kLabelReal, kLabelFake};

        auto f = [&]() {
            auto fwd = model.forward(batch, /*training=*/true);
            return total_loss(fwd.p_fake, labels, fwd.z, center, cfg.loss).total;
        };

        std::vector<Tensor<double>> inputs;
        for (auto& p : model.parameters()) inputs.push_back(p.tensor);
        inputs.push_back(batch);

        GradCheckOptions gopt;
        gopt.eps = opt.eps;
        gopt.max_coords_per_tensor = opt.coords_per_tensor;
        gopt.coord_seed = mix_seed(seed, 0xC0);
        gopt.abs_skip = 1e-9;
        const double rel = grad_check<double>(f, inputs, gopt);
        result.per_seed.push_back(rel);
        result.max_rel = std::max(result.max_rel, rel);
    }
    return result;
}

}  // namespace lrd
