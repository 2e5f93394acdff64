#pragma once

#include "umg/errors.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace umg {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Live-element accounting used as the activation-memory proxy. Counts tensor
// elements currently allocated, including activations pinned by a tape.
namespace memory {
struct Probe {
    std::atomic<int64_t> live{0};
    std::atomic<int64_t> peak{0};
    void add(int64_t n) {
        int64_t cur = live.fetch_add(n) + n;
        int64_t p = peak.load();
        while (cur > p && !peak.compare_exchange_weak(p, cur)) {}
    }
    void sub(int64_t n) { live.fetch_sub(n); }
};
inline Probe& probe() {
    static Probe p;
    return p;
}
inline void reset_peak() {
    probe().peak.store(probe().live.load());
}
inline int64_t peak() { return probe().peak.load(); }
inline int64_t live() { return probe().live.load(); }
} // namespace memory

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated lazily during backward / for leaves
    bool requires_grad = false;
    bool from_op = false; // produced by an op recorded on a tape

    TensorImpl(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        memory::probe().add(static_cast<int64_t>(data.size()));
    }
    ~TensorImpl() {
        memory::probe().sub(static_cast<int64_t>(data.size() + grad.size()));
    }
    TensorImpl(const TensorImpl&) = delete;
    TensorImpl& operator=(const TensorImpl&) = delete;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), T(0));
            memory::probe().add(static_cast<int64_t>(grad.size()));
        }
    }
};

template <typename T>
class Tape;

// Shared handle to a dense row-major tensor. Copying shares the buffer.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data)
        : p_(std::make_shared<TensorImpl<T>>(std::move(shape), std::move(data))) {}

    static Tensor zeros(Shape shape) {
        std::vector<T> d(static_cast<size_t>(numel(shape)), T(0));
        return Tensor(std::move(shape), std::move(d));
    }
    static Tensor full(Shape shape, T v) {
        std::vector<T> d(static_cast<size_t>(numel(shape)), v);
        return Tensor(std::move(shape), std::move(d));
    }
    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    bool defined() const { return static_cast<bool>(p_); }
    const Shape& shape() const { return p_->shape; }
    int64_t size() const { return static_cast<int64_t>(p_->data.size()); }
    int64_t dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(p_->shape.size()); }

    const std::vector<T>& data() const { return p_->data; }
    std::vector<T>& mutable_data() { return p_->data; }
    const std::vector<T>& grad() const { return p_->grad; }
    bool has_grad() const { return !p_->grad.empty(); }
    void zero_grad() {
        for (T& g : p_->grad) g = T(0);
    }

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        p_->requires_grad = v;
        if (v) {
            p_->ensure_grad();
        } else if (!p_->grad.empty()) {
            memory::probe().sub(static_cast<int64_t>(p_->grad.size()));
            p_->grad.clear();
            p_->grad.shrink_to_fit();
        }
        return *this;
    }
    // True when this tensor participates in differentiation.
    bool tracked() const { return p_->requires_grad || p_->from_op; }

    std::shared_ptr<TensorImpl<T>> impl() const { return p_; }

    T item() const {
        if (p_->data.size() != 1)
            throw ContractError("item() on non-scalar tensor " + shape_str(p_->shape));
        return p_->data[0];
    }

private:
    std::shared_ptr<TensorImpl<T>> p_;
};

// Reverse-mode tape. Ops push nodes in execution order; backward replays them
// in reverse exactly once.
template <typename T>
class Tape {
public:
    Tape() {
        prev_ = active_;
        active_ = this;
    }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void push(std::function<void()> backward_fn) {
        if (consumed_) throw StateError("tape already consumed; re-record before reuse");
        nodes_.push_back(std::move(backward_fn));
    }
    size_t size() const { return nodes_.size(); }

    // Populates grad buffers of every tracked tensor reachable from `loss`.
    void backward(const Tensor<T>& loss) {
        if (consumed_) throw StateError("backward called twice on the same tape");
        if (numel(loss.shape()) != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        consumed_ = true;
        auto impl = loss.impl();
        impl->ensure_grad();
        impl->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        nodes_.clear();
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    Tape* prev_ = nullptr;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

} // namespace umg
