#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cswin/errors.hpp"

namespace cswin {

// Conventions used everywhere:
//   * row-major storage, last axis fastest
//   * volumes are channel-major (C,H,W,D); batches prepend N
//   * token grids are (F,H,W,D)
// float is the training dtype; double exists for gradient checks.

using Shape = std::vector<int64_t>;
using Dims3 = std::array<int64_t, 3>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized on first use
    bool requires_grad = false;
    std::vector<Tensor<T>> parents;
    std::function<void(Node<T>&)> backward;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

// Thread-local switch; when false, ops run forward-only and build no graph.
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantics handle over a shared node. Copies alias the same storage;
// ops return fresh nodes wired to their parents for reverse-mode autodiff.
template <class T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from_data(std::move(shape), {});
    }

    static Tensor full(Shape shape, T value) {
        auto t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor scalar(T value) { return full({}, value); }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        auto node = std::make_shared<detail::Node<T>>();
        int64_t n = numel_of(shape);
        if (data.empty()) data.assign(static_cast<size_t>(n), T(0));
        if (static_cast<int64_t>(data.size()) != n)
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        node->shape = std::move(shape);
        node->data = std::move(data);
        return Tensor(std::move(node));
    }

    // Graph-building constructor used by every op.
    static Tensor make(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                       std::function<void(detail::Node<T>&)> backward) {
        Tensor t = from_data(std::move(shape), std::move(data));
        bool need = false;
        if (grad_enabled()) {
            for (const auto& p : parents)
                if (p.defined() && p.requires_grad()) need = true;
        }
        if (need) {
            t.node_->requires_grad = true;
            t.node_->parents = std::move(parents);
            t.node_->backward = std::move(backward);
        }
        return t;
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    size_t rank() const { return node_->shape.size(); }
    int64_t numel() const { return node_->numel(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }

    std::vector<T>& grad() { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    T item() const {
        if (numel() != 1)
            throw shape_error("item() on non-scalar tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    // Same storage, detached from the graph.
    Tensor detach() const {
        auto node = std::make_shared<detail::Node<T>>();
        node->shape = node_->shape;
        node->data = node_->data;
        return Tensor(std::move(node));
    }

    detail::Node<T>* node() const { return node_.get(); }

    // Reverse-mode sweep from a scalar result. Releases the graph afterwards
    // unless retain_graph is set.
    void backward(bool retain_graph = false) {
        if (numel() != 1)
            throw value_error("backward() requires a scalar result, got shape " + shape_str(shape()));
        if (!node_->requires_grad) return;

        std::vector<detail::Node<T>*> order;
        std::vector<Tensor<T>> keep;  // owns every node until the sweep is done
        topo_sort(order, keep);
        node_->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
        if (!retain_graph) {
            // Cut edges first so dropping `keep` cannot recurse through deep
            // parent chains.
            for (detail::Node<T>* n : order) {
                n->backward = nullptr;
                n->parents.clear();
            }
        }
    }

  private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    void topo_sort(std::vector<detail::Node<T>*>& order, std::vector<Tensor<T>>& keep) {
        std::unordered_set<detail::Node<T>*> seen;
        // Iterative DFS post-order; graphs are deep enough that recursion
        // would be a stack hazard.
        std::vector<std::pair<detail::Node<T>*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        keep.push_back(*this);
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                const Tensor<T>& p = n->parents[idx];
                ++idx;
                if (p.defined() && p.node()->requires_grad && !seen.count(p.node())) {
                    seen.insert(p.node());
                    keep.push_back(p);
                    stack.emplace_back(p.node(), 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<detail::Node<T>> node_;
};

template <class T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Finite guard applied by ops that can manufacture NaN/Inf from finite
// inputs (div, log, exp, pow, softmax, ...). Nothing propagates silently.
template <class T>
inline void check_finite(const std::vector<T>& v, const char* op) {
    if (!all_finite(v)) throw numeric_error(std::string(op) + " produced a non-finite value");
}

}  // namespace cswin
