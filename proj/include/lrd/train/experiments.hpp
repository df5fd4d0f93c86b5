#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lrd/data/synth.hpp"
#include "lrd/train/trainer.hpp"

namespace lrd {

/// One synthetic cross-domain run: micro model trained on real vs
/// I2I_proxy (400+400 at 64x64), then evaluated on fresh test splits of
/// every family (100 real + 100 fake per family).
struct CrossDomainResult {
    std::uint64_t seed = 0;
    double train_acc = 0.0;
    // per family: accuracy and mean embedding distance per class
    std::map<std::string, EvalReport> per_family;
};

struct CrossDomainProtocol {
    std::int64_t n_train_real = 400;
    std::int64_t n_train_fake = 400;
    std::int64_t n_test_per_class = 100;
    std::int64_t image_size = 64;
    std::int64_t epochs = 20;
    std::int64_t batch_size = 16;
    double lr = 3e-3;
    Family train_family = Family::I2I_proxy;
};

inline Dataset filter_family(const Dataset& data, const std::string& family) {
    Dataset out;
    for (const auto& img : data)
        if (img.label == kLabelReal || img.family == family) out.push_back(img);
    return out;
}

inline CrossDomainResult run_cross_domain(std::uint64_t seed, const CrossDomainProtocol& proto = {},
                                          GateMode mode = GateMode::Learned) {
    SyntheticDatasetSpec train_spec;
    train_spec.seed = seed;
    train_spec.n_real = proto.n_train_real;
    train_spec.n_fake_per_family = proto.n_train_fake;
    train_spec.families = {proto.train_family};
    train_spec.image_size = proto.image_size;
    Dataset train_set = generate(train_spec);

    SyntheticDatasetSpec test_spec;
    test_spec.seed = seed + 9000;  // disjoint seed stream from training
    test_spec.n_real = proto.n_test_per_class;
    test_spec.n_fake_per_family = proto.n_test_per_class;
    test_spec.image_size = proto.image_size;
    Dataset test_all = generate(test_spec);

    ModelConfig cfg = ModelConfig::micro(proto.image_size);
    cfg.seed = seed;
    cfg.epochs = proto.epochs;
    cfg.batch_size = proto.batch_size;
    cfg.lr = proto.lr;

    auto trained = train<float>(cfg, train_set, nullptr, nullptr, mode);

    CrossDomainResult result;
    result.seed = seed;
    result.train_acc = trained.epochs.back().acc;
    for (Family fam : {Family::FE_proxy, Family::I2I_proxy, Family::T2I_proxy}) {
        const std::string name = family_name(fam);
        result.per_family[name] =
            evaluate(trained.model, trained.center, filter_family(test_all, name), 0.5, 32, mode);
    }
    return result;
}

}  // namespace lrd
