#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "duoseg/core/rng.hpp"
#include "duoseg/core/shape.hpp"

namespace duoseg {

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

// One record of the computation: values plus, when gradients are tracked, the
// inputs it was computed from and a closure that pushes the output gradient
// back into them. The graph reachable from a loss is the tape that backward()
// walks in reverse topological order.
template <class Scalar>
struct TensorNode {
    Shape shape;
    ArrayX<Scalar> values;
    ArrayX<Scalar> grad;  // size 0 until a gradient is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() == 0) grad = ArrayX<Scalar>::Zero(values.size());
    }
};

// Gradient recording is on by default; evaluation paths disable it to skip
// building the graph.
inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Shared handle to a TensorNode. Copies alias the same storage; all ops are
// free functions that return fresh handles.
template <class Scalar>
class Tensor {
public:
    using Node = TensorNode<Scalar>;

    Tensor() = default;

    bool defined() const { return node_ != nullptr; }

    static Tensor uninit(const Shape& s) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = s;
        t.node_->values.resize(s.numel());
        return t;
    }

    static Tensor zeros(const Shape& s) { return full(s, Scalar(0)); }
    static Tensor ones(const Shape& s) { return full(s, Scalar(1)); }

    static Tensor full(const Shape& s, Scalar v) {
        Tensor t = uninit(s);
        t.node_->values.setConstant(v);
        return t;
    }

    static Tensor scalar(Scalar v) { return full(Shape{1}, v); }

    static Tensor from(const Shape& s, const std::vector<Scalar>& data) {
        if (static_cast<Index>(data.size()) != s.numel())
            throw std::invalid_argument("Tensor::from: data length does not match shape " + s.str());
        Tensor t = uninit(s);
        for (Index i = 0; i < t.numel(); ++i) t.node_->values[i] = data[static_cast<size_t>(i)];
        return t;
    }

    static Tensor uniform(const Shape& s, Pcg32& rng, Scalar lo, Scalar hi) {
        Tensor t = uninit(s);
        for (Index i = 0; i < t.numel(); ++i)
            t.node_->values[i] = lo + (hi - lo) * static_cast<Scalar>(rng.uniform());
        return t;
    }

    static Tensor randn(const Shape& s, Pcg32& rng) {
        Tensor t = uninit(s);
        for (Index i = 0; i < t.numel(); ++i) t.node_->values[i] = static_cast<Scalar>(rng.normal());
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    int rank() const { return node_->shape.rank(); }
    Index numel() const { return node_->values.size(); }

    ArrayX<Scalar>& values() { return node_->values; }
    const ArrayX<Scalar>& values() const { return node_->values; }
    Scalar* data() { return node_->values.data(); }
    const Scalar* data() const { return node_->values.data(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return node_->grad.size() > 0; }
    ArrayX<Scalar>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const ArrayX<Scalar>& grad() const {
        if (node_->grad.size() == 0) throw std::runtime_error("Tensor: gradient not populated");
        return node_->grad;
    }
    void zero_grad() { node_->grad.resize(0); }

    Scalar item() const {
        if (numel() != 1) throw std::runtime_error("Tensor::item: tensor is not scalar");
        return node_->values[0];
    }

    // Element access by multi-index, for tests and small utilities.
    Scalar at(std::initializer_list<int> idx) const { return node_->values[offset(idx)]; }
    void set(std::initializer_list<int> idx, Scalar v) { node_->values[offset(idx)] = v; }

    std::shared_ptr<Node> node() const { return node_; }

    // Marks this tensor as the output of an op over `parents`. Only called
    // when at least one parent tracks gradients.
    void mark_op(std::vector<Tensor> parents, std::function<void(Node&)> fn) {
        node_->parents.reserve(parents.size());
        for (auto& p : parents) node_->parents.push_back(p.node_);
        node_->backward_fn = std::move(fn);
        node_->requires_grad = true;
    }

    // Deep copy of values; no graph attachment.
    Tensor clone_detached() const {
        Tensor t = uninit(shape());
        t.node_->values = node_->values;
        return t;
    }

private:
    Index offset(std::initializer_list<int> idx) const {
        const Shape& s = node_->shape;
        if (static_cast<int>(idx.size()) != s.rank())
            throw std::invalid_argument("Tensor::at: index rank mismatch");
        Index off = 0;
        int axis = 0;
        for (int i : idx) {
            if (i < 0 || i >= s[axis]) throw std::out_of_range("Tensor::at: index out of range");
            off = off * s[axis] + i;
            ++axis;
        }
        return off;
    }

    std::shared_ptr<Node> node_;
};

template <class Scalar>
bool grad_track(const Tensor<Scalar>& t) {
    return g_grad_enabled && t.requires_grad();
}

template <class Scalar>
bool grad_track(std::initializer_list<Tensor<Scalar>> ts) {
    if (!g_grad_enabled) return false;
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

// Accumulate `delta` into the node's gradient if it participates in autodiff.
template <class Scalar, class Expr>
void accum_grad(TensorNode<Scalar>& n, const Expr& delta) {
    if (!n.requires_grad) return;
    n.ensure_grad();
    n.grad += delta;
}

// Reverse-mode accumulation from a scalar loss. Gradients add across repeated
// calls; callers reset with zero_grad when fresh gradients are needed.
template <class Scalar>
void backward(const Tensor<Scalar>& loss) {
    using Node = TensorNode<Scalar>;
    if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");

    // Iterative post-order DFS gives the topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    Node* root = loss.node().get();
    if (!root->requires_grad) throw std::runtime_error("backward: loss does not require grad");
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior gradients are scratch for this pass; only leaf gradients
    // persist, so replaying backward adds the same contribution again.
    for (Node* n : order)
        if (n->backward_fn) n->grad.resize(0);

    root->ensure_grad();
    root->grad[0] += Scalar(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward_fn) continue;
        if (n->grad.size() == 0) continue;
        if (!n->grad.allFinite()) throw std::runtime_error("backward: non-finite gradient detected");
        n->backward_fn(*n);
    }
}

}  // namespace duoseg
