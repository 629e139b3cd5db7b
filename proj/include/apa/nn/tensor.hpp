#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// Templated on the scalar type: float for production training, double for
// tight finite-difference verification. Reductions accumulate in double
// regardless of the storage type.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "apa/common.hpp"

namespace apa::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class T>
class TensorT {
public:
    using Ptr = std::shared_ptr<TensorT<T>>;

    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily when requires_grad
    bool requires_grad = false;

    // Graph edges; backward_fn adds this node's gradient contribution to its
    // parents. Captures raw pointers only — parents_ keeps them alive.
    std::vector<Ptr> parents;
    std::function<void()> backward_fn;

    std::size_t numel() const { return data.size(); }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T value() const {
        if (numel() != 1) throw Error("value(): tensor has shape " + shape_str(shape));
        return data[0];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() { grad.assign(data.size(), T(0)); }
};

template <class T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<TensorT<T>>();
    t->shape = std::move(shape);
    t->data.assign(shape_numel(t->shape), T(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto t = std::make_shared<TensorT<T>>();
    t->shape = std::move(shape);
    if (values.size() != shape_numel(t->shape))
        throw Error("tensor data length " + std::to_string(values.size()) +
                    " does not match shape " + shape_str(t->shape));
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <class T>
TensorPtr<T> scalar_tensor(T v) {
    return make_tensor<T>({1}, std::vector<T>{v});
}

// Marks the result of an op: gradients are needed iff any parent needs them.
template <class T>
void wire(const TensorPtr<T>& out, std::vector<TensorPtr<T>> parents,
          std::function<void()> backward_fn) {
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    out->requires_grad = needs;
    if (needs) {
        out->ensure_grad();
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
        for (const auto& p : out->parents) p->ensure_grad();
    }
}

// Reverse-mode sweep from a scalar root. Topological order by iterative DFS.
template <class T>
void backward(const TensorPtr<T>& root) {
    if (root->numel() != 1)
        throw Error("backward(): root must be scalar, got shape " + shape_str(root->shape));
    if (!root->requires_grad) throw Error("backward(): root does not require gradients");

    std::vector<TensorT<T>*> order;
    std::unordered_set<TensorT<T>*> seen;
    // Iterative post-order DFS; the stack stores (node, next-parent index).
    std::vector<std::pair<TensorT<T>*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorT<T>* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.push_back({parent, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// Drops graph edges after an optimizer step so per-step graphs are freed.
template <class T>
void detach_graph(const TensorPtr<T>& t) {
    t->parents.clear();
    t->backward_fn = nullptr;
}

}  // namespace apa::nn
