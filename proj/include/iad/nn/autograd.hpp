#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "iad/core/error.hpp"

namespace iad::nn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_count(const Shape& s);

/// 64-byte aligned storage. The vectorised kernels split loops at alignment
/// boundaries, so a fixed alignment keeps the summation order, and the results,
/// identical from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array with a lazily allocated gradient buffer.
struct Tensor {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), value(shape_count(shape), fill) {}
    Tensor(Shape s, std::span<const double> v) : shape(std::move(s)), value(v.begin(), v.end()) {
        require(value.size() == shape_count(shape), ErrorCode::Shape,
                "tensor: " + std::to_string(value.size()) + " values for shape " + shape_str(shape));
    }
    Tensor(Shape s, const std::vector<double>& v) : Tensor(std::move(s), std::span<const double>(v)) {}

    std::size_t size() const noexcept { return value.size(); }
    Buffer& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
    void zero_grad() { grad.assign(value.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_parameter(Shape shape) {
    auto t = std::make_shared<Tensor>(std::move(shape));
    t->requires_grad = true;
    return t;
}

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, TensorPtr t) : tape_(tape), t_(std::move(t)) {}

    Tape& tape() const noexcept { return *tape_; }
    const TensorPtr& ptr() const noexcept { return t_; }
    const Tensor& tensor() const noexcept { return *t_; }
    const Shape& shape() const noexcept { return t_->shape; }
    std::span<const double> values() const noexcept { return t_->value; }
    std::span<const double> grad() const noexcept { return t_->grad; }
    double item() const;

private:
    Tape* tape_ = nullptr;
    TensorPtr t_;
};

/// Records operations in execution order; backward() replays them in reverse.
/// Single-threaded. Leaves created with param() share storage with the parameter,
/// so gradients accumulate directly into it.
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    Var param(const TensorPtr& p) { return Var(this, p); }
    Var constant(Tensor t);

    /// Adds a result; `backward` runs only if gradients are being recorded.
    Var push(TensorPtr out, std::function<void()> backward);

    bool recording() const noexcept { return record_; }

    /// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
    void backward(const Var& root);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        TensorPtr out;
        std::function<void()> backward;
    };
    bool record_;
    std::vector<Node> nodes_;
};

// Primitives. Matrices are [rows, cols] row-major; sequences are [channels, time].

/// out[:, t] = b + sum_k W[k] x[:, t - k * dilation], with zeros before t = 0.
/// weight shape [K, C_out, C_in]; tap k = 0 is the current step.
Var causal_conv1d(const Var& x, const Var& weight, const Var& bias, std::size_t dilation);
Var leaky_relu(const Var& x, double slope = 0.01);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var subtract(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
/// x [In] -> [Out] or x [B, In] -> [B, Out]; weight [Out, In], bias [Out].
Var linear(const Var& x, const Var& weight, const Var& bias);
/// [C, T] -> [C]
Var mean_over_time(const Var& x);
/// Log-softmax within consecutive groups of `group` entries of a flat vector.
Var log_softmax(const Var& logits, std::size_t group);
/// Mean over groups of -logp[g * group + target[g]].
Var nll(const Var& log_probs, std::span<const std::size_t> targets, std::size_t group);
/// Euclidean norm of all entries (scalar); subgradient 0 at the origin.
Var l2_norm(const Var& x);
Var normalize(const Var& x);
Var distance(const Var& a, const Var& b);
Var sum(const Var& x);
Var mean(const Var& x);
/// mean squared difference with a constant target of the same shape
Var mse(const Var& prediction, std::span<const double> target);
/// Identity forward; backward multiplies the incoming gradient by `factor`.
Var grad_scale(const Var& x, double factor);
/// grad_scale(x, -lambda).
Var grad_reverse(const Var& x, double lambda);

}  // namespace iad::nn
