#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lrd/core/conv_ops.hpp"
#include "lrd/core/grad_check.hpp"
#include "lrd/core/ops.hpp"
#include "lrd/core/tensor.hpp"
#include "support/test_util.hpp"

using namespace lrd;
using testutil::random_tensor;

namespace {

// Naive nested-loop convolution oracle (zero padding, cross-correlation).
template <typename S>
Tensor<S> conv2d_oracle(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* bias, std::int64_t stride,
                        std::int64_t pad, std::int64_t groups) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t co = w.dim(0), cg = c / groups, cog = co / groups, k = w.dim(2);
    const std::int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<S> y = Tensor<S>::zeros({n, co, ho, wo});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t oc = 0; oc < co; ++oc) {
            const std::int64_t g = oc / cog;
            for (std::int64_t oh = 0; oh < ho; ++oh)
                for (std::int64_t ow = 0; ow < wo; ++ow) {
                    double acc = bias ? static_cast<double>(bias->data()[oc]) : 0.0;
                    for (std::int64_t ic = 0; ic < cg; ++ic)
                        for (std::int64_t kh = 0; kh < k; ++kh)
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                const std::int64_t ih = oh * stride - pad + kh;
                                const std::int64_t iw = ow * stride - pad + kw;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                                acc += static_cast<double>(x.at4(i, g * cg + ic, ih, iw)) *
                                       static_cast<double>(w.at4(oc, ic, kh, kw));
                            }
                    y.at4(i, oc, oh, ow) = static_cast<S>(acc);
                }
        }
    return y;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    auto x = Tensor<float>::from_values({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto w = Tensor<float>::from_values({1, 1, 1, 1}, {1});
    auto y = conv2d(x, w, nullptr, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 2x2 sums") {
    auto x = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
    auto w = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
    auto y = conv2d(x, w, nullptr, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(4.0f));
}

TEST_CASE("conv2d depthwise matches loop oracle") {
    Rng rng(11);
    auto x = random_tensor<double>(rng, {1, 2, 5, 5});
    auto w = random_tensor<double>(rng, {2, 1, 3, 3});
    auto b = random_tensor<double>(rng, {2});
    auto y = conv2d(x, w, &b, 1, 1, 2);
    auto ref = conv2d_oracle(x, w, &b, 1, 1, 2);
    CHECK(testutil::max_abs_diff(y, ref) <= 1e-6);
}

TEST_CASE("conv2d grouped/strided matches loop oracle") {
    Rng rng(12);
    for (auto [groups, stride, pad] : std::vector<std::tuple<int, int, int>>{{1, 1, 1}, {2, 2, 1}, {1, 2, 0}}) {
        auto x = random_tensor<double>(rng, {2, 4, 7, 7});
        auto w = random_tensor<double>(rng, {6, 4 / groups, 3, 3});
        auto b = random_tensor<double>(rng, {6});
        auto y = conv2d<double>(x, w, &b, stride, pad, groups);
        auto ref = conv2d_oracle<double>(x, w, &b, stride, pad, groups);
        CHECK(testutil::max_abs_diff(y, ref) <= 1e-6);
    }
}

TEST_CASE("conv2d shape errors name the offending dims") {
    auto x = Tensor<float>::zeros({1, 3, 5, 5});
    auto w = Tensor<float>::zeros({4, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 1), ShapeError);
    auto w2 = Tensor<float>::zeros({4, 3, 3, 3});
    auto bad_bias = Tensor<float>::zeros({5});
    CHECK_THROWS_AS(conv2d(x, w2, &bad_bias, 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, w2, nullptr, 1, 0, 2), ShapeError);
}

TEST_CASE("primitive values") {
    auto z = Tensor<float>::scalar(0.0f);
    CHECK(sigmoid(z).item() == doctest::Approx(0.5f));

    auto s = softmax(Tensor<float>::from_values({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(s.data()[i] == doctest::Approx(1.0f / 3.0f));

    // linear with identity weights
    auto x = Tensor<float>::from_values({1, 3}, {1, 2, 3});
    auto w = Tensor<float>::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = Tensor<float>::zeros({3});
    auto y = linear(x, w, &b);
    for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == x.data()[i]);

    // MobileNetV3 piecewise definitions
    auto hs = hardswish(Tensor<float>::from_values({4}, {-4.0f, 0.0f, 1.0f, 4.0f}));
    CHECK(hs.data()[0] == doctest::Approx(0.0f));
    CHECK(hs.data()[1] == doctest::Approx(0.0f));
    CHECK(hs.data()[2] == doctest::Approx(4.0f / 6.0f));
    CHECK(hs.data()[3] == doctest::Approx(4.0f));
    auto hg = hardsigmoid(Tensor<float>::from_values({3}, {-4.0f, 0.0f, 4.0f}));
    CHECK(hg.data()[0] == doctest::Approx(0.0f));
    CHECK(hg.data()[1] == doctest::Approx(0.5f));
    CHECK(hg.data()[2] == doctest::Approx(1.0f));
}

TEST_CASE("batchnorm2d validates eps and matches direct formula") {
    auto x = Tensor<float>::from_values({1, 1, 1, 4}, {1, 2, 3, 4});
    auto gamma = Tensor<float>::full({1}, 2.0f);
    auto beta = Tensor<float>::full({1}, 0.5f);
    auto mean = Tensor<float>::full({1}, 2.5f);
    auto var = Tensor<float>::full({1}, 1.25f);
    CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, mean, var, 0.0), ValueError);
    auto y = batchnorm2d(x, gamma, beta, mean, var, 1e-5);
    for (int i = 0; i < 4; ++i) {
        const float expect = 2.0f * (x.data()[i] - 2.5f) / std::sqrt(1.25f + 1e-5f) + 0.5f;
        CHECK(y.data()[i] == doctest::Approx(expect));
    }
}

TEST_CASE("softmax simplex property") {
    Rng rng(5);
    for (int s = 0; s < 20; ++s) {
        auto x = random_tensor<float>(rng, {4, 7}, -6.0, 6.0);
        auto y = softmax(x);
        for (int r = 0; r < 4; ++r) {
            float sum = 0.0f;
            for (int c = 0; c < 7; ++c) {
                CHECK(y.at2(r, c) > 0.0f);
                sum += y.at2(r, c);
            }
            CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
        }
    }
}

TEST_CASE("gaussian_blur preserves constants and normalizes impulse") {
    auto c = Tensor<float>::full({1, 2, 8, 8}, 0.37f);
    auto bc = gaussian_blur(c, 1.5);
    for (std::int64_t i = 0; i < bc.numel(); ++i) CHECK(bc.data()[i] == doctest::Approx(0.37f).epsilon(1e-6));

    auto imp = Tensor<float>::zeros({1, 1, 9, 9});
    imp.at4(0, 0, 4, 4) = 1.0f;
    auto bi = gaussian_blur(imp, 1.0);
    double sum = 0.0;
    for (std::int64_t i = 0; i < bi.numel(); ++i) sum += bi.data()[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(gaussian_blur(c, 0.0), ValueError);
}

TEST_CASE("gaussian_blur matches dense 2-D kernel-matrix oracle") {
    // Build the (HW x HW) matrix of the separable kernel with the same
    // reflect indexing and multiply it out directly.
    Rng rng(21);
    auto x = random_tensor<double>(rng, {1, 1, 9, 9});
    const double sigma = 1.0;
    auto y = gaussian_blur(x, sigma);

    const auto k = detail::gaussian_kernel<double>(sigma);
    const std::int64_t r = static_cast<std::int64_t>(k.size() / 2), n = 9;
    std::vector<double> dense(81 * 81, 0.0);
    for (std::int64_t oy = 0; oy < n; ++oy)
        for (std::int64_t ox = 0; ox < n; ++ox)
            for (std::int64_t ty = -r; ty <= r; ++ty)
                for (std::int64_t tx = -r; tx <= r; ++tx) {
                    const std::int64_t sy = detail::reflect_index(oy + ty, n);
                    const std::int64_t sx = detail::reflect_index(ox + tx, n);
                    dense[(oy * n + ox) * 81 + sy * n + sx] += k[ty + r] * k[tx + r];
                }
    for (std::int64_t o = 0; o < 81; ++o) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < 81; ++i) acc += dense[o * 81 + i] * x.data()[i];
        CHECK(std::abs(acc - y.data()[o]) <= 1e-6);
    }
}

TEST_CASE("bilinear_resize conventions") {
    auto c = Tensor<float>::full({1, 3, 5, 7}, 0.25f);
    auto rc = bilinear_resize(c, 11, 3);
    for (std::int64_t i = 0; i < rc.numel(); ++i) CHECK(rc.data()[i] == doctest::Approx(0.25f));

    Rng rng(3);
    auto x = random_tensor<float>(rng, {1, 1, 6, 6});
    auto same = bilinear_resize(x, 6, 6);
    CHECK(testutil::max_abs_diff(x, same) <= 1e-7);

    // half-pixel-center samples evaluated by hand for 2x2 -> 1x4
    auto m = Tensor<float>::from_values({1, 1, 2, 2}, {0, 1, 0, 1});
    auto y = bilinear_resize(m, 1, 4);
    const float expect[4] = {0.0f, 0.25f, 0.75f, 1.0f};
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]));

    CHECK_THROWS_AS(bilinear_resize(x, 0, 4), ValueError);
}

TEST_CASE("l2_normalize") {
    auto v = Tensor<float>::from_values({2}, {3, 4});
    auto u = l2_normalize(v);
    CHECK(u.data()[0] == doctest::Approx(0.6f));
    CHECK(u.data()[1] == doctest::Approx(0.8f));

    auto e = Tensor<float>::from_values({3}, {0, 1, 0});
    auto ue = l2_normalize(e);
    for (int i = 0; i < 3; ++i) CHECK(ue.data()[i] == doctest::Approx(e.data()[i]));

    Rng rng(9);
    auto w = random_tensor<float>(rng, {64});
    auto uw = l2_normalize(w);
    double nrm = 0.0;
    for (std::int64_t i = 0; i < 64; ++i) nrm += uw.data()[i] * uw.data()[i];
    CHECK(std::sqrt(nrm) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(l2_normalize(Tensor<float>::zeros({4})), ValueError);
}

TEST_CASE("bce values") {
    auto half = Tensor<double>::from_values({1}, {0.5});
    CHECK(bce(half, {1}).item() == doctest::Approx(std::log(2.0)));
    auto good = Tensor<double>::from_values({1}, {1.0 - 1e-7});
    CHECK(bce(good, {1}).item() == doctest::Approx(1e-7).epsilon(0.01));
    Rng rng(17);
    auto p = random_tensor<double>(rng, {8}, 0.05, 0.95);
    std::vector<int> y = {0, 1, 1, 0, 1, 0, 0, 1};
    double ref = 0.0;
    for (int i = 0; i < 8; ++i) {
        const double pi = p.data()[i];
        ref -= y[i] * std::log(pi) + (1 - y[i]) * std::log(1 - pi);
    }
    ref /= 8.0;
    CHECK(bce(p, y).item() == doctest::Approx(ref).epsilon(1e-7));
    CHECK_THROWS_AS(bce(Tensor<double>::zeros({0}), {}), ShapeError);
}

TEST_CASE("grad_check x^2 at 3") {
    auto x = Tensor<double>::from_values({1}, {3.0}, true);
    auto f = [&] { return sum_all(mul(x, x)); };
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = f();
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
    x.zero_grad();
    CHECK(grad_check<double>(f, {x}, {.eps = 1e-5}) <= 1e-7);
}

TEST_CASE("grad_check sum sigmoid") {
    Rng rng(23);
    auto x = random_tensor<double>(rng, {3, 4}, -2.0, 2.0, {}, 0, true);
    auto f = [&] { return sum_all(sigmoid(x)); };
    CHECK(grad_check<double>(f, {x}, {.eps = 1e-5}) <= 1e-6);
}

TEST_CASE("grad_check eps range enforced") {
    auto x = Tensor<double>::from_values({1}, {1.0}, true);
    auto f = [&] { return sum_all(mul(x, x)); };
    CHECK_THROWS_AS(grad_check<double>(f, {x}, {.eps = 1e-2}), ValueError);
    CHECK_THROWS_AS(grad_check<double>(f, {x}, {.eps = 1e-8}), ValueError);
}

TEST_CASE("grad_check rejects non-scalar f") {
    auto x = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
    auto f = [&] { return mul(x, x); };
    CHECK_THROWS_AS(grad_check<double>(f, {x}, {}), ShapeError);
}

// Module invariant: every differentiable op passes a randomized
// finite-difference check at 64-bit over >= 20 seeds.
TEST_CASE("per-op gradient property") {
    struct Case {
        const char* name;
        std::function<double(Rng&)> run;  // returns max rel error for one seed
    };

    // mean((y+0.3)^2): deterministic, non-uniform gradients, O(1) magnitude
    // (keeps finite-difference cancellation noise far below the 1e-8
    // denominator floor), and not constant under norm-preserving ops.
    auto sq = [](const Tensor<double>& t) {
        auto s = add_scalar(t, 0.3);
        return mean_all(mul(s, s));
    };
    const GradCheckOptions GC{.eps = 1e-5, .max_coords_per_tensor = -1, .coord_seed = 0x5eed, .abs_skip = 1e-9};
    const GradCheckOptions GC24{.eps = 1e-5, .max_coords_per_tensor = 24, .coord_seed = 0x5eed, .abs_skip = 1e-9};

    std::vector<Case> cases;
    cases.push_back({"add", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {2, 3}, -2, 2, {}, 0, true);
                         auto b = random_tensor<double>(rng, {2, 3}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(add(a, b)); }, {a, b}, GC);
                     }});
    cases.push_back({"sub_mul_scalar", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {2, 3}, -2, 2, {}, 0, true);
                         auto b = random_tensor<double>(rng, {2, 3}, -2, 2, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sum_all(mul_scalar(add_scalar(sub(a, b), 0.7), 1.3)); }, {a, b}, GC);
                     }});
    cases.push_back({"mul", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {7}, -2, 2, {0.0}, 0.05, true);
                         auto b = random_tensor<double>(rng, {7}, -2, 2, {0.0}, 0.05, true);
                         return grad_check<double>([&] { return sum_all(mul(a, b)); }, {a, b}, GC);
                     }});
    cases.push_back({"relu", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 5}, -2, 2, {0.0}, 0.1, true);
                         return grad_check<double>([&] { return sq(relu(a)); }, {a}, GC);
                     }});
    cases.push_back({"sigmoid", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 5}, -3, 3, {}, 0, true);
                         return grad_check<double>([&] { return sq(sigmoid(a)); }, {a}, GC);
                     }});
    cases.push_back({"hardswish", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 5}, -4, 4, {-3.0, -1.5, 3.0}, 0.1, true);
                         return grad_check<double>([&] { return sq(hardswish(a)); }, {a}, GC);
                     }});
    cases.push_back({"hardsigmoid", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 5}, -4, 4, {-3.0, 3.0}, 0.1, true);
                         return grad_check<double>([&] { return sq(hardsigmoid(a)); }, {a}, GC);
                     }});
    cases.push_back({"sqrt", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {6}, 0.2, 3.0, {}, 0, true);
                         return grad_check<double>([&] { return sq(sqrt_op(a)); }, {a}, GC);
                     }});
    cases.push_back({"softmax", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 4}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(softmax(a)); }, {a}, GC);
                     }});
    cases.push_back({"mean_all", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {4, 3}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return mean_all(a); }, {a}, GC);
                     }});
    cases.push_back({"mean_axis0", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {5, 3}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(mean_axis0(a)); }, {a}, GC);
                     }});
    cases.push_back({"sum_axis1", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {4, 6}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(sum_axis1(a)); }, {a}, GC);
                     }});
    cases.push_back({"gather_select", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {5, 4}, -2, 2, {}, 0, true);
                         std::vector<std::int64_t> idx = {4, 0, 2, 0};
                         return grad_check<double>(
                             [&] { return sum_all(select_col(gather_rows(a, idx), 1)); }, {a}, GC);
                     }});
    cases.push_back({"row_scale", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {4, 3}, -2, 2, {0.0}, 0.05, true);
                         auto s = random_tensor<double>(rng, {4}, -2, 2, {0.0}, 0.05, true);
                         return grad_check<double>([&] { return sq(row_scale(a, s)); }, {a, s}, GC);
                     }});
    cases.push_back({"sample_scale", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 2, 2, 2}, -2, 2, {0.0}, 0.05, true);
                         auto s = random_tensor<double>(rng, {3}, -2, 2, {0.0}, 0.05, true);
                         return grad_check<double>([&] { return sq(sample_scale(a, s)); }, {a, s}, GC);
                     }});
    cases.push_back({"sub_rowvec", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {4, 3}, -2, 2, {}, 0, true);
                         auto v = random_tensor<double>(rng, {3}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(sub_rowvec(a, v)); }, {a, v}, GC);
                     }});
    cases.push_back({"concat_lastdim", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {3, 2}, -2, 2, {}, 0, true);
                         auto b = random_tensor<double>(rng, {3, 4}, -2, 2, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(concat_lastdim<double>({a, b})); }, {a, b}, GC);
                     }});
    cases.push_back({"concat_channels", [&](Rng& rng) {
                         auto a = random_tensor<double>(rng, {2, 2, 3, 3}, -2, 2, {}, 0, true);
                         auto b = random_tensor<double>(rng, {2, 1, 3, 3}, -2, 2, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(concat_channels(a, b)); }, {a, b}, GC);
                     }});
    cases.push_back({"linear", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {3, 4}, -2, 2, {}, 0, true);
                         auto w = random_tensor<double>(rng, {5, 4}, -1, 1, {}, 0, true);
                         auto b = random_tensor<double>(rng, {5}, -1, 1, {}, 0, true);
                         return grad_check<double>([&] { return sq(linear(x, w, &b)); }, {x, w, b}, GC);
                     }});
    cases.push_back({"l2_normalize", [&](Rng& rng) {
                         auto v = random_tensor<double>(rng, {6}, 0.5, 2.0, {}, 0, true);
                         return grad_check<double>([&] { return sq(l2_normalize(v)); }, {v}, GC);
                     }});
    cases.push_back({"l2_normalize_rows", [&](Rng& rng) {
                         auto v = random_tensor<double>(rng, {3, 5}, 0.3, 2.0, {}, 0, true);
                         return grad_check<double>([&] { return sq(l2_normalize_rows(v)); }, {v}, GC);
                     }});
    cases.push_back({"batchnorm2d_eval", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 3, 3, 3}, -2, 2, {}, 0, true);
                         auto g = random_tensor<double>(rng, {3}, 0.5, 1.5, {}, 0, true);
                         auto b = random_tensor<double>(rng, {3}, -0.5, 0.5, {}, 0, true);
                         auto m = random_tensor<double>(rng, {3}, -0.2, 0.2);
                         auto v = random_tensor<double>(rng, {3}, 0.5, 1.5);
                         return grad_check<double>(
                             [&] { return sq(batchnorm2d(x, g, b, m, v, 1e-5)); }, {x, g, b}, GC);
                     }});
    cases.push_back({"batchnorm2d_train", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {3, 2, 3, 3}, -2, 2, {}, 0, true);
                         auto g = random_tensor<double>(rng, {2}, 0.5, 1.5, {}, 0, true);
                         auto b = random_tensor<double>(rng, {2}, -0.5, 0.5, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(batchnorm2d_train(x, g, b, 1e-5)); }, {x, g, b}, GC);
                     }});
    cases.push_back({"bce", [&](Rng& rng) {
                         auto p = random_tensor<double>(rng, {6}, 0.1, 0.9, {}, 0, true);
                         std::vector<int> y = {1, 0, 1, 1, 0, 0};
                         return grad_check<double>([&] { return bce(p, y); }, {p}, GC);
                     }});
    cases.push_back({"conv2d_g1", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 3, 5, 5}, -1, 1, {}, 0, true);
                         auto w = random_tensor<double>(rng, {4, 3, 3, 3}, -1, 1, {}, 0, true);
                         auto b = random_tensor<double>(rng, {4}, -1, 1, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(conv2d(x, w, &b, 2, 1, 1)); }, {x, w, b}, GC24);
                     }});
    cases.push_back({"conv2d_depthwise", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 4, 5, 5}, -1, 1, {}, 0, true);
                         auto w = random_tensor<double>(rng, {4, 1, 3, 3}, -1, 1, {}, 0, true);
                         auto b = random_tensor<double>(rng, {4}, -1, 1, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(conv2d(x, w, &b, 1, 1, 4)); }, {x, w, b}, GC24);
                     }});
    cases.push_back({"conv2d_grouped", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {1, 4, 4, 4}, -1, 1, {}, 0, true);
                         auto w = random_tensor<double>(rng, {6, 2, 3, 3}, -1, 1, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(conv2d<double>(x, w, nullptr, 1, 1, 2)); }, {x, w}, GC24);
                     }});
    cases.push_back({"global_avg_pool", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 3, 4, 4}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(global_avg_pool(x)); }, {x}, GC);
                     }});
    cases.push_back({"avg_pool", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 2, 4, 4}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(avg_pool(x, 2)); }, {x}, GC);
                     }});
    cases.push_back({"gaussian_blur", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {1, 2, 6, 6}, -2, 2, {}, 0, true);
                         return grad_check<double>([&] { return sq(gaussian_blur(x, 1.2)); }, {x}, GC);
                     }});
    cases.push_back({"bilinear_resize", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {1, 2, 4, 5}, -2, 2, {}, 0, true);
                         return grad_check<double>(
                             [&] { return sq(bilinear_resize(x, 7, 3)); }, {x}, GC);
                     }});
    cases.push_back({"scale_channels", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 3, 3, 3}, -2, 2, {0.0}, 0.05, true);
                         auto s = random_tensor<double>(rng, {2, 3}, -2, 2, {0.0}, 0.05, true);
                         return grad_check<double>([&] { return sq(scale_channels(x, s)); }, {x, s}, GC);
                     }});
    cases.push_back({"scale_spatial", [&](Rng& rng) {
                         auto x = random_tensor<double>(rng, {2, 3, 3, 3}, -2, 2, {0.0}, 0.05, true);
                         auto g = random_tensor<double>(rng, {2, 1, 3, 3}, -2, 2, {0.0}, 0.05, true);
                         return grad_check<double>([&] { return sq(scale_spatial(x, g)); }, {x, g}, GC);
                     }});

    for (const auto& c : cases) {
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            Rng rng(seed * 7919);
            worst = std::max(worst, c.run(rng));
        }
        INFO("op = " << std::string(c.name) << " worst rel err = " << worst);
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
    Rng rng(101);
    auto x = random_tensor<float>(rng, {1, 3, 8, 8});
    auto w = random_tensor<float>(rng, {4, 3, 3, 3});
    auto y1 = conv2d(x, w, nullptr, 1, 1);
    auto y2 = conv2d(x, w, nullptr, 1, 1);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
    auto b1 = gaussian_blur(x, 1.0), b2 = gaussian_blur(x, 1.0);
    for (std::int64_t i = 0; i < b1.numel(); ++i) CHECK(b1.data()[i] == b2.data()[i]);
}

TEST_CASE("backward accumulates each leaf exactly once per call") {
    auto x = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto a = add(x, x);       // dx accumulates twice through two paths
        auto loss = sum_all(a);
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
    // second backward on a consumed tape is rejected
    auto y = Tensor<double>::scalar(1.0);
    y.set_requires_grad(true);
    CHECK_THROWS_AS(tape.backward(y), ValueError);
}
