#pragma once

#include <functional>
#include <memory>
#include <span>

#include "dvmsr/common.hpp"

namespace dvmsr {

namespace detail {

// One value in the recorded operation graph. Ops link outputs to their
// inputs via `parents` and stash a pull-style backward rule; traversal
// order is handled by Tensor::backward().
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Thread-local gradient recording switch.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Debug-mode NaN/Inf detection: when on, every op validates its output.
bool finite_checks_enabled();
void set_finite_checks(bool on);

// Dense 64-bit tensor with optional reverse-mode gradient tracking.
// Copying a Tensor copies the handle, not the buffer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    // Normal(0, stddev) re-sampled until within 2*stddev of the mean.
    static Tensor trunc_normal(Shape shape, Rng& rng, double stddev);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const;  // negative i counts from the back
    int64_t numel() const { return node_->numel(); }

    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    std::span<const double> values() const { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return node_ && node_->parents.empty(); }

    // Gradient buffer (allocated zeroed on first access).
    double* grad_data();
    std::span<const double> grad() const;
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    // Deep copy of the values; no graph, no grad.
    Tensor clone() const;
    // Same values, detached from the graph (shares nothing).
    Tensor detach() const { return clone(); }

    // Reverse-mode differentiation from a scalar. Each graph node is
    // visited exactly once; parameter grads accumulate additively.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// Throws std::runtime_error naming the tensor if any value is non-finite.
void check_finite(const Tensor& t, const std::string& what);

namespace detail {

// Op helper: allocate the output node and wire parents/backward when
// recording is active and any input participates in the graph.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn,
                   const char* op_name);

bool any_requires_grad(const std::vector<Tensor>& inputs);

}  // namespace detail

}  // namespace dvmsr
