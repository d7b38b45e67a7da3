#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "lesyn/core/tensor.hpp"

namespace lesyn::ag {

// Reverse-mode autograd over Tensor<T>. Graphs are built eagerly by the ops in
// ops.hpp and freed when the root goes out of scope. Single-threaded by design:
// node ordering (and therefore backward order) is the creation order.

inline thread_local uint64_t g_node_counter = 0;
inline thread_local int g_no_grad_depth = 0;

struct NoGradGuard {
    NoGradGuard() { ++g_no_grad_depth; }
    ~NoGradGuard() { --g_no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return g_no_grad_depth == 0; }

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    bool grad_ready = false;
    uint64_t order = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (!grad_ready) {
            grad = Tensor<T>(value.shape());
            grad_ready = true;
        }
    }

    void zero_grad() {
        if (grad_ready) grad.fill(T(0));
    }
};

template <typename T>
using NodeRef = std::shared_ptr<Node<T>>;

template <typename T>
NodeRef<T> leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->order = ++g_node_counter;
    return n;
}

template <typename T>
NodeRef<T> param(Tensor<T> value) {
    return leaf(std::move(value), true);
}

template <typename T>
NodeRef<T> constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

// Interior node. Drops the graph edges when gradients are disabled or no parent
// needs them, so inference builds no history.
template <typename T>
NodeRef<T> make_op(Tensor<T> value, std::vector<NodeRef<T>> parents, std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->order = ++g_node_counter;
    bool track = grad_enabled();
    if (track) {
        track = false;
        for (const auto& p : parents) {
            if (p->requires_grad) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

// Accumulate `delta` into the gradient of `p` (no-op if p does not require grad).
template <typename T>
void accumulate(const NodeRef<T>& p, const Tensor<T>& delta) {
    if (!p->requires_grad) return;
    p->ensure_grad();
    if (!p->grad.same_shape(delta)) throw std::logic_error("autograd: gradient shape mismatch");
    T* g = p->grad.data();
    const T* d = delta.data();
    const int64_t n = delta.numel();
    for (int64_t i = 0; i < n; ++i) g[i] += d[i];
}

template <typename T>
void backward(const NodeRef<T>& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
    // Topological collection (iterative DFS), then run in reverse creation order.
    std::vector<Node<T>*> topo;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root.get()};
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || seen.count(n)) continue;
        seen.insert(n);
        topo.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(topo.begin(), topo.end(), [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });
    root->ensure_grad();
    root->grad[0] += T(1);
    for (Node<T>* n : topo) {
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace lesyn::ag
