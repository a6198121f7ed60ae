#include "dvmsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dvmsr {

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = false;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("non-finite value in " + what);
        }
    }
}

Tensor Tensor::zeros(Shape shape) {
    return from_data(std::move(shape), {});
}

Tensor Tensor::full(Shape shape, double v) {
    std::vector<double> data(static_cast<size_t>(dvmsr::numel(shape)), v);
    return from_data(std::move(shape), std::move(data));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    int64_t n = dvmsr::numel(shape);
    if (n < 0) throw std::invalid_argument("Tensor: negative extent in shape " + shape_str(shape));
    if (data.empty()) data.assign(static_cast<size_t>(n), 0.0);
    if (static_cast<int64_t>(data.size()) != n) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return wrap(std::move(node));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, double mean) {
    int64_t n = dvmsr::numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = mean + stddev * rng.normal();
    return from_data(std::move(shape), std::move(data));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    int64_t n = dvmsr::numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return from_data(std::move(shape), std::move(data));
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, double stddev) {
    int64_t n = dvmsr::numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = stddev * z;
    }
    return from_data(std::move(shape), std::move(data));
}

int64_t Tensor::dim(int i) const {
    int nd = ndim();
    if (i < 0) i += nd;
    if (i < 0 || i >= nd) throw std::invalid_argument("Tensor::dim index out of range");
    return node_->shape[static_cast<size_t>(i)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("Tensor::item requires a single-element tensor, got shape " +
                                    shape_str(shape()));
    }
    return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

double* Tensor::grad_data() {
    node_->ensure_grad();
    return node_->grad.data();
}

std::span<const double> Tensor::grad() const {
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    return from_data(node_->shape, node_->value);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(shape()));
    }

    // Iterative post-order DFS for a topological ordering.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

namespace detail {

bool any_requires_grad(const std::vector<Tensor>& inputs) {
    for (const auto& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn,
                   const char* op_name) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_finite_checks) {
        for (double v : node->value) {
            if (!std::isfinite(v)) {
                throw std::runtime_error(std::string("non-finite value produced by ") + op_name);
            }
        }
    }
    if (g_grad_enabled && any_requires_grad(inputs)) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (auto& t : inputs) {
            if (t.defined()) node->parents.push_back(t.node());
        }
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(node));
}

}  // namespace detail

}  // namespace dvmsr
