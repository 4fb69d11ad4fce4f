#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "smre/errors.hpp"

namespace smre {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

template <typename S>
struct TensorData {
    std::vector<S> value;
    std::vector<S> grad;  // empty means zero / not yet accumulated
    bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor. Copies are shallow handles onto shared storage;
/// values are treated as immutable once produced by an operation. Leaf
/// tensors (parameters, input data) may be filled in place before use.
template <typename S>
class Tensor {
    static_assert(std::is_floating_point_v<S>, "Tensor requires a real scalar type");

public:
    Tensor() : impl_(std::make_shared<detail::TensorData<S>>()) {}

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.shape_ = validated(std::move(shape));
        t.impl_->value.assign(shape_numel(t.shape_), S(0));
        return t;
    }

    static Tensor full(Shape shape, S v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.impl_->value.begin(), t.impl_->value.end(), v);
        return t;
    }

    static Tensor scalar(S v) { return full({1}, v); }

    static Tensor from(Shape shape, std::vector<S> data) {
        Shape sh = validated(std::move(shape));
        if (shape_numel(sh) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(sh));
        Tensor t;
        t.shape_ = std::move(sh);
        t.impl_->value = std::move(data);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return impl_->value.size(); }

    const S* data() const { return impl_->value.data(); }
    S* mutable_data() { return impl_->value.data(); }
    const std::vector<S>& values() const { return impl_->value; }

    S item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return impl_->value[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }

    /// Gradient buffer; empty means zero (nothing accumulated yet).
    const std::vector<S>& grad() const { return impl_->grad; }
    std::vector<S>& mutable_grad() { return impl_->grad; }

    void zero_grad() { impl_->grad.clear(); }

    // Const on the handle, not the shared buffer: backward closures hold
    // const copies of their operands and still need to deposit gradients.
    void accumulate_grad(const S* g, std::size_t n) const {
        if (n != size()) throw DimensionError("gradient length mismatch");
        if (impl_->grad.empty()) impl_->grad.assign(size(), S(0));
        for (std::size_t i = 0; i < n; ++i) impl_->grad[i] += g[i];
    }

    void seed_grad_one() {
        impl_->grad.assign(size(), S(0));
        impl_->grad[0] = S(1);
    }

    /// Same storage viewed under a new shape; gradients flow through as-is.
    Tensor reshaped(Shape shape) const {
        Shape sh = validated(std::move(shape));
        if (shape_numel(sh) != size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(sh));
        Tensor t;
        t.shape_ = std::move(sh);
        t.impl_ = impl_;
        return t;
    }

    /// Value copy detached from the tape and from gradient flow.
    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.impl_->value = impl_->value;
        return t;
    }

    bool all_finite() const {
        for (S v : impl_->value)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const std::string& what) const {
        if (!all_finite()) throw EvaluationError(what + " contains NaN/Inf");
    }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

private:
    static Shape validated(Shape s) {
        for (std::size_t d : s)
            if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(s));
        return s;
    }

    Shape shape_;
    std::shared_ptr<detail::TensorData<S>> impl_;
};

/// Reverse-mode tape. Operations append their backward closures in execution
/// order, which is a topological order by construction; backward() replays
/// them in reverse and then clears the tape.
template <typename S>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active_slot() {
        thread_local Tape* t = nullptr;
        return t;
    }
    static Tape* active() { return active_slot(); }

    /// RAII activation; ops record onto the active tape only.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
        ~Scope() { active_slot() = prev_; }
        Scope(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }
    std::size_t size() const { return nodes_.size(); }

    void backward(Tensor<S>& loss) {
        if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (nodes_.empty()) throw ContractError("backward on an empty tape");
        loss.check_finite("loss");
        loss.seed_grad_one();
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();  // tape consumed
    }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename S, typename F>
inline void record_if_needed(bool needs_grad, Tensor<S>& out, F&& back) {
    if (needs_grad && Tape<S>::active() != nullptr) {
        out.set_requires_grad(true);
        Tape<S>::active()->record(std::forward<F>(back));
    }
}

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    S* o = out.mutable_data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = pa[i] + pb[i];
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (a.requires_grad()) a.accumulate_grad(g.data(), g.size());
        if (b.requires_grad()) b.accumulate_grad(g.data(), g.size());
    });
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    S* o = out.mutable_data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = pa[i] - pb[i];
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (a.requires_grad()) a.accumulate_grad(g.data(), g.size());
        if (b.requires_grad()) {
            std::vector<S> neg(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            b.accumulate_grad(neg.data(), neg.size());
        }
    });
    return out;
}

/// Hadamard product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    S* o = out.mutable_data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) o[i] = pa[i] * pb[i];
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        if (a.requires_grad()) {
            for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * b.data()[i];
            a.accumulate_grad(buf.data(), buf.size());
        }
        if (b.requires_grad()) {
            for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * a.data()[i];
            b.accumulate_grad(buf.data(), buf.size());
        }
    });
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = px[i] * c;
    detail::record_if_needed(x.requires_grad(), out, [x, out, c]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * c;
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
    return scale(x, S(-1));
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = px[i] + c;
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        x.accumulate_grad(g.data(), g.size());
    });
    return out;
}

/// c - x, elementwise.
template <typename S>
Tensor<S> rsub_scalar(S c, const Tensor<S>& x) {
    return add_scalar(neg(x), c);
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = std::tanh(px[i]);
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        const S* y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * (S(1) - y[i] * y[i]);
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        S v = px[i];
        o[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
    }
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        const S* y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * y[i] * (S(1) - y[i]);
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

/// max(0, x). Subgradient at the kink is 0 (the hinge is inactive at exactly 0).
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = px[i] > S(0) ? px[i] : S(0);
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        const S* px = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = px[i] > S(0) ? g[i] : S(0);
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    S* o = out.mutable_data();
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = px[i] * px[i];
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(g.size());
        const S* px = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * S(2) * px[i];
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

// ---------------------------------------------------------------------------
// Matrix product and reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    Tensor<S> out = Tensor<S>::zeros({m, n});
    S* o = out.mutable_data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        S* orow = o + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const S av = pa[i * k + p];
            if (av == S(0)) continue;
            const S* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    detail::record_if_needed(a.requires_grad() || b.requires_grad(), out, [a, b, out, m, k, n]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        if (a.requires_grad()) {
            std::vector<S> da(m * k, S(0));
            const S* pb = b.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    S acc = S(0);
                    const S* grow = g.data() + i * n;
                    const S* brow = pb + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da[i * k + p] = acc;
                }
            a.accumulate_grad(da.data(), da.size());
        }
        if (b.requires_grad()) {
            std::vector<S> db(k * n, S(0));
            const S* pa = a.data();
            for (std::size_t i = 0; i < m; ++i) {
                const S* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const S av = pa[i * k + p];
                    if (av == S(0)) continue;
                    S* drow = db.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            }
            b.accumulate_grad(db.data(), db.size());
        }
    });
    return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros({1});
    S acc = S(0);
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];  // fixed left-to-right order
    out.mutable_data()[0] = acc;
    detail::record_if_needed(x.requires_grad(), out, [x, out]() mutable {
        const auto& g = out.grad();
        if (g.empty()) return;
        std::vector<S> buf(x.size(), g[0]);
        x.accumulate_grad(buf.data(), buf.size());
    });
    return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), S(1) / static_cast<S>(x.size()));
}

}  // namespace smre
