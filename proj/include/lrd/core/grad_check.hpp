#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lrd/core/tensor.hpp"

namespace lrd {

struct GradCheckOptions {
    double eps = 1e-5;
    // When >= 0, check at most this many coordinates per input tensor,
    // chosen by a seeded draw; -1 sweeps everything.
    std::int64_t max_coords_per_tensor = -1;
    std::uint64_t coord_seed = 0x5eed;
    // Coordinates whose analytic and numeric values agree within this
    // absolute bound count as exact. Near-zero gradients (e.g. the
    // shift-invariant direction of batchnorm) otherwise read as pure
    // finite-difference cancellation noise against the 1e-8 denominator
    // floor. 0 disables the skip.
    double abs_skip = 0.0;
};

/// Central finite differences against tape gradients for a scalar-valued
/// function of the given inputs. `f` must rebuild its forward pass from the
/// current input values on every call and must not consume entropy. Returns
/// the max elementwise relative error with denominator max(|a|,|b|,1e-8).
template <typename S>
double grad_check(const std::function<Tensor<S>()>& f, const std::vector<Tensor<S>>& inputs,
                  const GradCheckOptions& opt = {}) {
    if (opt.eps < 1e-7 || opt.eps > 1e-3) throw ValueError("grad_check: eps must be in [1e-7, 1e-3]");
    for (const auto& t : inputs)
        if (!t.requires_grad()) throw ValueError("grad_check: all inputs must require grad");

    // analytic pass
    std::vector<std::vector<S>> analytic;
    {
        for (const auto& t : inputs) const_cast<Tensor<S>&>(t).zero_grad();
        GradTape<S> tape;
        Tensor<S> loss;
        {
            TapeScope<S> scope(tape);
            loss = f();
        }
        if (loss.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
        tape.backward(loss);
        for (const auto& t : inputs) analytic.push_back(t.grad());
    }

    auto eval = [&]() -> double {
        Tensor<S> v = f();
        if (v.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
        return static_cast<double>(v.item());
    };

    double max_rel = 0.0;
    Rng pick(opt.coord_seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Tensor<S>& x = const_cast<Tensor<S>&>(inputs[t]);
        const std::int64_t n = x.numel();
        std::vector<std::int64_t> coords;
        if (opt.max_coords_per_tensor < 0 || opt.max_coords_per_tensor >= n) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            for (std::int64_t i = 0; i < opt.max_coords_per_tensor; ++i)
                coords.push_back(pick.uniform_int(0, n - 1));
        }
        for (std::int64_t i : coords) {
            const S orig = x.data()[i];
            x.data()[i] = orig + static_cast<S>(opt.eps);
            const double fp = eval();
            x.data()[i] = orig - static_cast<S>(opt.eps);
            const double fm = eval();
            x.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double an = static_cast<double>(analytic[t][static_cast<std::size_t>(i)]);
            if (opt.abs_skip > 0.0 && std::abs(an - numeric) <= opt.abs_skip) continue;
            const double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(an - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace lrd
