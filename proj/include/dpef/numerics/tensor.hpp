// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpef/errors.hpp"

namespace dpef {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this tensor
    bool requires_grad = false;
    bool is_leaf = true;

    std::span<T> ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Dense row-major array with an attached gradient slot.
///
/// A Tensor is a cheap handle: copies share storage. Values produced by ops
/// are never modified afterwards; only leaves (parameters, inputs under a
/// gradient check) are mutated in place through `mutable_data()`.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : storage_(std::make_shared<TensorStorage<T>>()) {
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
        if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        for (const T& v : data) {
            if (!std::isfinite(v)) throw NonFiniteError("tensor construction");
        }
        storage_->shape = std::move(shape);
        storage_->data = std::move(data);
        storage_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    /// Builds a rows x cols matrix from nested initializer lists (test convenience).
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        std::vector<T> data;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(data));
    }

    static Tensor from_storage(std::shared_ptr<TensorStorage<T>> s) {
        Tensor t;
        t.storage_ = std::move(s);
        return t;
    }

    bool defined() const noexcept { return static_cast<bool>(storage_); }
    const Shape& shape() const { return storage_->shape; }
    std::size_t rank() const { return storage_->shape.size(); }
    std::size_t dim(std::size_t i) const { return storage_->shape.at(i); }
    std::size_t numel() const { return storage_->data.size(); }
    std::size_t rows() const { return rank() == 1 ? 1 : storage_->shape[0]; }
    std::size_t cols() const { return storage_->shape.back(); }

    std::span<const T> data() const { return storage_->data; }
    std::span<T> mutable_data() { return storage_->data; }
    const std::vector<T>& values() const { return storage_->data; }

    bool has_grad() const { return !storage_->grad.empty(); }
    std::span<const T> grad() const { return storage_->grad; }
    std::span<T> mutable_grad() { return storage_->ensure_grad(); }
    void zero_grad() { storage_->grad.clear(); }

    bool requires_grad() const { return storage_->requires_grad; }
    void set_requires_grad(bool v) { storage_->requires_grad = v; }
    bool is_leaf() const { return storage_->is_leaf; }

    T item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return storage_->data[0];
    }

    T at(std::size_t r, std::size_t c) const { return storage_->data[r * cols() + c]; }
    T operator[](std::size_t i) const { return storage_->data[i]; }

    /// Same values, no gradient history, independent storage.
    Tensor detach() const { return Tensor(shape(), storage_->data, false); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(storage_->data.begin(), storage_->data.end());
        return Tensor<U>(shape(), std::move(out), requires_grad());
    }

    const std::shared_ptr<TensorStorage<T>>& storage() const { return storage_; }

private:
    std::shared_ptr<TensorStorage<T>> storage_;
};

/// Ordered record of differentiable ops; replayed in reverse by `backward`.
///
/// Recording is explicit: ops append to the tape that is active on the
/// current thread (see `Tape::Scope`). With no active tape, ops compute
/// values only.
template <typename T>
class Tape {
public:
    using StoragePtr = std::shared_ptr<TensorStorage<T>>;

    struct Node {
        std::string op;
        std::vector<StoragePtr> inputs;
        StoragePtr output;
        std::function<void(std::span<const T>)> backward;
        std::function<std::vector<T>()> recompute;
    };

    class Scope {
    public:
        explicit Scope(Tape& tape) : previous_(current_) { current_ = &tape; }
        ~Scope() { current_ = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    /// Suspends recording on this thread (value-only evaluation).
    class Pause {
    public:
        Pause() : previous_(current_) { current_ = nullptr; }
        ~Pause() { current_ = previous_; }
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* active() noexcept { return current_; }

    void push(Node node) { nodes_.push_back(std::move(node)); }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
    /// newest first.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
        auto seed = loss.storage()->ensure_grad();
        seed[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (it->output->grad.empty()) continue;
            it->backward(it->output->grad);
        }
        for (auto& node : nodes_) {
            for (auto& in : node.inputs) {
                if (in->requires_grad && in->is_leaf) in->ensure_grad();
            }
        }
    }

private:
    std::vector<Node> nodes_;
    static inline thread_local Tape* current_ = nullptr;
};

namespace detail {

template <typename T>
void check_finite(std::span<const T> values, const std::string& op) {
    for (const T& v : values) {
        if (!std::isfinite(v)) throw NonFiniteError(op);
    }
}

/// Wraps freshly computed values into a Tensor and, when a tape is active and
/// any input carries gradient, records the op with its backward rule.
template <typename T, typename Forward, typename Backward>
Tensor<T> emit(std::string op, Shape shape, Forward&& forward, std::initializer_list<Tensor<T>> inputs,
               Backward&& backward) {
    std::vector<T> values = forward();
    check_finite<T>(values, op);
    auto out = std::make_shared<TensorStorage<T>>();
    out->shape = std::move(shape);
    out->data = std::move(values);
    out->is_leaf = false;

    Tape<T>* tape = Tape<T>::active();
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (tape && needs_grad) {
        out->requires_grad = true;
        typename Tape<T>::Node node;
        node.op = std::move(op);
        for (const auto& in : inputs) node.inputs.push_back(in.storage());
        node.output = out;
        node.backward = std::forward<Backward>(backward);
        node.recompute = std::forward<Forward>(forward);
        tape->push(std::move(node));
    }
    return Tensor<T>::from_storage(std::move(out));
}

/// Same as above for ops whose input list is only known at runtime.
template <typename T, typename Forward, typename Backward>
Tensor<T> emit_n(std::string op, Shape shape, Forward&& forward, const std::vector<Tensor<T>>& inputs,
                 Backward&& backward) {
    std::vector<T> values = forward();
    check_finite<T>(values, op);
    auto out = std::make_shared<TensorStorage<T>>();
    out->shape = std::move(shape);
    out->data = std::move(values);
    out->is_leaf = false;

    Tape<T>* tape = Tape<T>::active();
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    if (tape && needs_grad) {
        out->requires_grad = true;
        typename Tape<T>::Node node;
        node.op = std::move(op);
        for (const auto& in : inputs) node.inputs.push_back(in.storage());
        node.output = out;
        node.backward = std::forward<Backward>(backward);
        node.recompute = std::forward<Forward>(forward);
        tape->push(std::move(node));
    }
    return Tensor<T>::from_storage(std::move(out));
}

}  // namespace detail
}  // namespace dpef
