#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared references to its inputs and a closure that
// pushes its output gradient back into them. backward() orders the reachable
// nodes topologically and runs those closures from the loss down.
//
// Broadcasting aligns trailing dimensions; a size-1 (or missing leading)
// dimension stretches to match the other operand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"

namespace hagcn::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        if (values.size() != numel(shape))
            throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        const auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    // Direct write access, for optimizers and initializers. Does not record.
    std::span<T> mutable_values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    T at(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw ShapeError("index rank mismatch");
        std::size_t flat = 0;
        std::size_t d = 0;
        for (auto i : idx) {
            if (i >= node_->shape[d]) throw ShapeError("index out of range");
            flat = flat * node_->shape[d] + i;
            ++d;
        }
        return node_->value[flat];
    }

    const char* op() const { return node_->op; }

    // Same values, cut from the graph.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> v(node_->value.begin(), node_->value.end());
        return Tensor<U>(shape(), std::move(v), requires_grad());
    }

private:
    std::shared_ptr<Node<T>> node_;
};

// Builds an op result. Records parents and the backward rule only when some
// input requires a gradient. Non-finite outputs raise at this op.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs, std::function<void(Node<T>&)> backward_fn) {
    if (!Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(values.data(), static_cast<Eigen::Index>(values.size()))
             .allFinite())
        throw NumericalError(std::string(op) + " produced a non-finite value");
    Tensor<T> out(std::move(shape), std::move(values));
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (any) {
        auto& n = *out.node();
        n.requires_grad = true;
        n.op = op;
        for (const auto* in : inputs) n.parents.push_back(in->node());
        n.backward_fn = std::move(backward_fn);
    } else {
        out.node()->op = op;
    }
    return out;
}

// Populates d(loss)/d(t) for every requires_grad tensor reachable from loss.
// Leaf gradients accumulate across calls; intermediate gradients are released.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->is_leaf()) continue;
        if (!n->grad.empty() && n->backward_fn) n->backward_fn(*n);
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

}  // namespace hagcn::ad
