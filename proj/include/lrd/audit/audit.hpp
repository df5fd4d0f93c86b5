#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "lrd/nn/model.hpp"

namespace lrd {

/// Per-component trainable-scalar counts alongside the published reference
/// figures (reported, not enforced, except where the reference uniquely
/// determines the layer shapes).
struct ParamAuditReport {
    std::int64_t spatial_backbone = 0;
    std::int64_t frequency_branch = 0;
    std::int64_t projection_head = 0;
    std::int64_t classifier = 0;
    std::int64_t total = 0;

    // published reference column
    static constexpr std::int64_t ref_spatial_backbone = 2539376;
    static constexpr std::int64_t ref_frequency_branch = 7780;
    static constexpr std::int64_t ref_projection_head = 82112;
    static constexpr std::int64_t ref_classifier = 130;
    static constexpr std::int64_t ref_total = 2629398;

    std::int64_t delta_spatial_backbone() const { return spatial_backbone - ref_spatial_backbone; }
    std::int64_t delta_frequency_branch() const { return frequency_branch - ref_frequency_branch; }
    std::int64_t delta_projection_head() const { return projection_head - ref_projection_head; }
    std::int64_t delta_classifier() const { return classifier - ref_classifier; }
    std::int64_t delta_total() const { return total - ref_total; }
};

/// Exact per-component counts grouped by module ownership (conditioning
/// projections live inside the backbone).
template <typename S>
ParamAuditReport count_params(const LrdNet<S>& model) {
    ParamAuditReport r;
    for (const auto& p : model.parameters()) {
        const std::int64_t n = p.tensor.numel();
        if (p.name.rfind("backbone", 0) == 0)
            r.spatial_backbone += n;
        else if (p.name.rfind("mswgm", 0) == 0)
            r.frequency_branch += n;
        else if (p.name.rfind("proj", 0) == 0)
            r.projection_head += n;
        else if (p.name.rfind("cls", 0) == 0)
            r.classifier += n;
        else
            throw ValueError("count_params: unowned parameter " + p.name);
        r.total += n;
    }
    return r;
}

struct FootprintReport {
    std::int64_t params = 0;
    std::int64_t bytes_fp32 = 0;
    std::int64_t bytes_fp16 = 0;
    std::int64_t bytes_int8 = 0;
};

inline FootprintReport footprint(std::int64_t params) {
    if (params < 0) throw ValueError("footprint: negative parameter count");
    return {params, params * 4, params * 2, params * 1};
}

inline FootprintReport footprint(const ParamAuditReport& report) { return footprint(report.total); }

/// Bytes for one precision tag; unknown tags are an error.
inline std::int64_t footprint_bytes(std::int64_t params, const std::string& precision) {
    const FootprintReport r = footprint(params);
    if (precision == "fp32") return r.bytes_fp32;
    if (precision == "fp16") return r.bytes_fp16;
    if (precision == "int8") return r.bytes_int8;
    throw ValueError("footprint: unknown precision tag '" + precision + "'");
}

struct BenchResult {
    std::int64_t n_images = 0;
    std::int64_t batch = 0;
    std::int64_t warmup = 0;
    double mean_ms_per_image = 0.0;
    double p50_ms_per_image = 0.0;
    double p95_ms_per_image = 0.0;
    double throughput_per_s = 0.0;
};

/// Wall-clock inference statistics (guidance + backbone + heads only, no
/// image decode or I/O). Warmup batches are excluded from the statistics.
template <typename S>
BenchResult benchmark(LrdNet<S>& model, std::int64_t n_images, std::int64_t batch, std::int64_t warmup,
                      std::uint64_t seed = 1234) {
    if (batch < 1 || warmup < 0) throw ValueError("benchmark: bad batch/warmup");
    if (n_images < warmup + 10) throw ValueError("benchmark: need n_images >= warmup + 10");
    Rng rng(seed);
    Tensor<S> x = Tensor<S>::zeros({batch, 3, model.cfg.input_size, model.cfg.input_size});
    for (auto& v : x.values()) v = static_cast<S>(rng.uniform(0.0, 1.0));

    using clock = std::chrono::steady_clock;
    std::vector<double> per_image_ms;
    std::int64_t done = -warmup;
    while (done < n_images) {
        const auto t0 = clock::now();
        (void)model.forward(x, false);
        const auto t1 = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (done >= 0)
            for (std::int64_t i = 0; i < batch; ++i) per_image_ms.push_back(ms / static_cast<double>(batch));
        done += batch;
    }
    std::sort(per_image_ms.begin(), per_image_ms.end());
    BenchResult r;
    r.n_images = n_images;
    r.batch = batch;
    r.warmup = warmup;
    double sum = 0.0;
    for (double v : per_image_ms) sum += v;
    r.mean_ms_per_image = sum / static_cast<double>(per_image_ms.size());
    r.p50_ms_per_image = per_image_ms[per_image_ms.size() / 2];
    r.p95_ms_per_image = per_image_ms[static_cast<std::size_t>(0.95 * (per_image_ms.size() - 1))];
    r.throughput_per_s = 1000.0 / r.mean_ms_per_image;
    return r;
}

}  // namespace lrd
