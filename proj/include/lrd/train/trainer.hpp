#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <sstream>
#include <vector>

#include "lrd/data/dataset.hpp"
#include "lrd/nn/model.hpp"
#include "lrd/train/optimizer.hpp"

namespace lrd {

struct StepLog {
    std::int64_t step = 0;
    LossBreakdown loss;
    double drift = 0.0;
    double lr = 0.0;
};

struct EpochLog {
    std::int64_t epoch = 0;
    double acc = 0.0;
    double mean_dist_real = 0.0;
    double mean_dist_fake = 0.0;
};

struct EvalReport {
    double accuracy = 0.0;
    double acc_real = 0.0;
    double acc_fake = 0.0;
    double mean_dist_real = 0.0;
    double mean_dist_fake = 0.0;
    std::int64_t n = 0;
};

template <typename S>
struct TrainResult {
    LrdNet<S> model;
    RealCenter<S> center;
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    std::string rng_state;

    explicit TrainResult(const ModelConfig& cfg) : model(cfg), center(cfg.d_e, cfg.mu) {}
};

namespace detail {

template <typename S>
double dist_to_center(const Tensor<S>& z_row_values, const Tensor<S>& c, std::int64_t row) {
    const std::int64_t d = c.numel();
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
        const double dd =
            static_cast<double>(z_row_values.data()[row * d + j]) - static_cast<double>(c.data()[j]);
        acc += dd * dd;
    }
    return std::sqrt(acc);
}

inline void log_json_line(std::ostream* os, const std::string& line) {
    if (os) (*os) << line << "\n";
}

}  // namespace detail

/// Full training loop. Deterministic under (seed, config, data): fixed
/// init draw order, seeded shuffles, single-threaded math.
template <typename S>
TrainResult<S> train(const ModelConfig& cfg, const Dataset& train_set, const Dataset* val_set = nullptr,
                     std::ostream* log_stream = nullptr, GateMode mode = GateMode::Learned) {
    if (train_set.empty()) throw ValueError("train: empty dataset");
    for (const auto& img : train_set)
        if (img.label != kLabelReal && img.label != kLabelFake) throw ValueError("train: label out of {0,1}");
    (void)val_set;

    TrainResult<S> result(cfg);
    Adam<S> opt(result.model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay);
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::int64_t step_index = 0;

    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        std::int64_t correct = 0;
        double dist_real_sum = 0.0, dist_fake_sum = 0.0;
        std::int64_t n_real = 0, n_fake = 0;

        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), off + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::size_t> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(off),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor<S> batch = stack_batch<S>(train_set, batch_idx);
            std::vector<int> labels = batch_labels(train_set, batch_idx);

            // capture forward stats before the step mutates weights
            ++step_index;
            opt.zero_grad();
            GradTape<S> tape;
            typename LrdNet<S>::ForwardResult fwd;
            TotalLoss<S> loss;
            {
                TapeScope<S> scope(tape);
                fwd = result.model.forward(batch, /*training=*/true, mode);
                loss = total_loss(fwd.p_fake, labels, fwd.z, result.center, cfg.loss);
                if (!all_finite(loss.total))
                    throw ValueError("train: non-finite loss at step " + std::to_string(step_index));
                tape.backward(loss.total);
            }
            opt.step();

            std::vector<std::int64_t> real_rows;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                const bool fake_pred = static_cast<double>(fwd.p_fake.data()[i]) >= 0.5;
                if ((labels[i] == kLabelFake) == fake_pred) ++correct;
                if (labels[i] == kLabelReal) real_rows.push_back(static_cast<std::int64_t>(i));
            }
            if (result.center.initialized) {
                for (std::size_t i = 0; i < labels.size(); ++i) {
                    const double d =
                        detail::dist_to_center(fwd.z, result.center.c, static_cast<std::int64_t>(i));
                    if (labels[i] == kLabelReal) {
                        dist_real_sum += d;
                        ++n_real;
                    } else {
                        dist_fake_sum += d;
                        ++n_fake;
                    }
                }
            }
            if (!real_rows.empty()) {
                Tensor<S> reals =
                    Tensor<S>::zeros({static_cast<std::int64_t>(real_rows.size()), cfg.d_e});
                for (std::size_t r = 0; r < real_rows.size(); ++r)
                    std::copy_n(fwd.z.data() + real_rows[r] * cfg.d_e, cfg.d_e,
                                reals.data() + static_cast<std::int64_t>(r) * cfg.d_e);
                ema_update(result.center, reals);
            }

            StepLog slog;
            slog.step = step_index;
            slog.loss = loss.breakdown;
            slog.drift = static_cast<double>(result.center.last_drift);
            slog.lr = cfg.lr;
            result.steps.push_back(slog);
            if (log_stream) {
                std::ostringstream os;
                os << "{\"step\":" << slog.step << ",\"l_cls\":" << slog.loss.l_cls
                   << ",\"l_center\":" << slog.loss.l_center << ",\"l_drift\":" << slog.loss.l_drift
                   << ",\"total\":" << slog.loss.total << ",\"drift\":" << slog.drift << ",\"lr\":" << slog.lr
                   << "}";
                detail::log_json_line(log_stream, os.str());
            }
        }

        EpochLog elog;
        elog.epoch = epoch;
        elog.acc = static_cast<double>(correct) / static_cast<double>(order.size());
        elog.mean_dist_real = n_real ? dist_real_sum / static_cast<double>(n_real) : 0.0;
        elog.mean_dist_fake = n_fake ? dist_fake_sum / static_cast<double>(n_fake) : 0.0;
        result.epochs.push_back(elog);
        if (log_stream) {
            std::ostringstream os;
            os << "{\"epoch\":" << elog.epoch << ",\"acc\":" << elog.acc
               << ",\"mean_dist_real\":" << elog.mean_dist_real << ",\"mean_dist_fake\":" << elog.mean_dist_fake
               << "}";
            detail::log_json_line(log_stream, os.str());
        }
    }
    std::ostringstream rs;
    rs << shuffle_rng.engine();
    result.rng_state = rs.str();
    return result;
}

/// Hard-decision evaluation at the given threshold; ties (p_fake ==
/// threshold) classify as fake. Also reports mean embedding distance to the
/// center per class.
template <typename S>
EvalReport evaluate(LrdNet<S>& model, const RealCenter<S>& center, const Dataset& data, double threshold = 0.5,
                    std::int64_t batch_size = 32, GateMode mode = GateMode::Learned) {
    if (data.empty()) throw ValueError("evaluate: empty dataset");
    EvalReport rep;
    std::int64_t correct = 0, correct_real = 0, correct_fake = 0, n_real = 0, n_fake = 0;
    double dist_real_sum = 0.0, dist_fake_sum = 0.0;
    for (std::size_t off = 0; off < data.size(); off += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.size(), off + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - off);
        std::iota(idx.begin(), idx.end(), off);
        Tensor<S> batch = stack_batch<S>(data, idx);
        auto fwd = model.forward(batch, /*training=*/false, mode);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const int label = data[idx[i]].label;
            const bool fake_pred = static_cast<double>(fwd.p_fake.data()[i]) >= threshold;
            const bool ok = (label == kLabelFake) == fake_pred;
            correct += ok;
            const double d = detail::dist_to_center(fwd.z, center.c, static_cast<std::int64_t>(i));
            if (label == kLabelReal) {
                ++n_real;
                correct_real += ok;
                dist_real_sum += d;
            } else {
                ++n_fake;
                correct_fake += ok;
                dist_fake_sum += d;
            }
        }
    }
    rep.n = static_cast<std::int64_t>(data.size());
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.n);
    rep.acc_real = n_real ? static_cast<double>(correct_real) / static_cast<double>(n_real) : 0.0;
    rep.acc_fake = n_fake ? static_cast<double>(correct_fake) / static_cast<double>(n_fake) : 0.0;
    rep.mean_dist_real = n_real ? dist_real_sum / static_cast<double>(n_real) : 0.0;
    rep.mean_dist_fake = n_fake ? dist_fake_sum / static_cast<double>(n_fake) : 0.0;
    return rep;
}

}  // namespace lrd
