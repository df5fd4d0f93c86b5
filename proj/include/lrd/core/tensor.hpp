#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrd {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename Scalar>
struct TensorData {
    Shape shape;
    std::vector<Scalar> values;
    std::vector<Scalar> grad;  // allocated iff requires_grad
    bool requires_grad = false;
};

/// Dense row-major n-d tensor handle. Copies share storage; ops allocate
/// fresh storage for their outputs. Gradients live next to the values and
/// are populated by GradTape::backward.
template <typename Scalar>
class Tensor {
public:
    using Data = TensorData<Scalar>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = std::move(shape);
        t.d_->values.assign(static_cast<std::size_t>(numel_of(t.d_->shape)), Scalar(0));
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<Scalar> vals, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<std::int64_t>(vals.size()))
            throw ShapeError("from_values: shape " + shape_str(shape) + " does not match " +
                             std::to_string(vals.size()) + " values");
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = std::move(shape);
        t.d_->values = std::move(vals);
        if (requires_grad) t.set_requires_grad(true);
        return t;
    }

    static Tensor scalar(Scalar v) { return from_values({1}, {v}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::int64_t dim(std::size_t i) const { return d_->shape.at(i); }
    std::size_t rank() const { return d_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }

    std::vector<Scalar>& values() { return d_->values; }
    const std::vector<Scalar>& values() const { return d_->values; }
    Scalar* data() { return d_->values.data(); }
    const Scalar* data() const { return d_->values.data(); }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool on) {
        d_->requires_grad = on;
        if (on && d_->grad.size() != d_->values.size()) d_->grad.assign(d_->values.size(), Scalar(0));
        if (!on) d_->grad.clear();
    }
    std::vector<Scalar>& grad() { return d_->grad; }
    const std::vector<Scalar>& grad() const { return d_->grad; }
    Scalar* grad_data() { return d_->grad.data(); }
    void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), Scalar(0)); }

    Scalar item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
        return d_->values[0];
    }

    /// Value copy with no grad tracking.
    Tensor detached_copy() const {
        Tensor t;
        t.d_ = std::make_shared<Data>();
        t.d_->shape = d_->shape;
        t.d_->values = d_->values;
        return t;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> v(d_->values.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Other>(d_->values[i]);
        return Tensor<Other>::from_values(d_->shape, std::move(v));
    }

    std::shared_ptr<Data> node() const { return d_; }

    // 4-d / 2-d convenience accessors (row-major)
    Scalar& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        const Shape& s = d_->shape;
        return d_->values[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
    }
    Scalar at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        const Shape& s = d_->shape;
        return d_->values[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
    }
    Scalar& at2(std::int64_t r, std::int64_t c) {
        return d_->values[static_cast<std::size_t>(r * d_->shape[1] + c)];
    }
    Scalar at2(std::int64_t r, std::int64_t c) const {
        return d_->values[static_cast<std::size_t>(r * d_->shape[1] + c)];
    }

private:
    std::shared_ptr<Data> d_;
};

/// Ordered record of the differentiable ops executed while the tape was
/// active. Replaying it in reverse is a valid topological order of the
/// forward graph, so each node runs exactly once per backward call.
template <typename Scalar>
class GradTape {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }

    void backward(Tensor<Scalar>& loss) {
        if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (consumed_) throw ValueError("backward: tape already consumed");
        if (!loss.requires_grad()) throw ValueError("backward: loss does not require grad (tape inactive?)");
        consumed_ = true;
        loss.grad()[0] = Scalar(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

namespace detail {
template <typename Scalar>
inline GradTape<Scalar>*& tape_slot() {
    thread_local GradTape<Scalar>* slot = nullptr;
    return slot;
}
}  // namespace detail

template <typename Scalar>
inline GradTape<Scalar>* active_tape() {
    return detail::tape_slot<Scalar>();
}

/// RAII activation of a tape on the current thread. Ops record backward
/// closures only while a tape is active and an input requires grad.
template <typename Scalar>
class TapeScope {
public:
    explicit TapeScope(GradTape<Scalar>& tape) : prev_(detail::tape_slot<Scalar>()) {
        detail::tape_slot<Scalar>() = &tape;
    }
    ~TapeScope() { detail::tape_slot<Scalar>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<Scalar>* prev_;
};

template <typename Scalar>
inline bool all_finite(const Tensor<Scalar>& t) {
    for (Scalar v : t.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename Scalar>
inline void check_finite(const Tensor<Scalar>& t, const char* what) {
    if (!all_finite(t)) throw ValueError(std::string("non-finite values in ") + what);
}

/// Deterministic RNG wrapper used for init and data generation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean, double stddev) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }
    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// splitmix64 — stable way to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace lrd
