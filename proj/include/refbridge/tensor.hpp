#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "refbridge/errors.hpp"

namespace refbridge {

// Dense row-major float32 tensor with reverse-mode autodiff.
//
// Each op records a backward closure on a tape node; Tensor::backward() runs
// the tape in reverse topological order and accumulates (+=) into parent
// grads, so a node feeding several consumers sums their contributions.
// Values are immutable after construction except for parameter updates
// between graph builds (see mutable_data) and grad accumulation. A graph is
// confined to one thread; independent graphs on separate threads are fine.
//
// Graph recording can be switched off (NoGradGuard) for inference paths;
// ops then produce leaf tensors with no parents.

class Tensor;

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<float> value;
    std::vector<float> grad;  // sized on demand, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, bumps parents

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

bool grad_enabled();

}  // namespace detail

// Disables tape recording in scope (thread-local).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float v);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data);
    static Tensor scalar(float v) { return from_data({1}, {v}); }
    // Leaf with requires_grad set; the trainable-parameter constructor.
    static Tensor param(std::vector<int> shape, std::vector<float> data);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<float>& data() const { return node_->value; }
    // In-place value access for optimizer updates and parameter IO only;
    // never call on a tensor that is part of a live recorded graph.
    std::vector<float>& mutable_data() { return node_->value; }

    float item() const;
    float at(std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<float>& grad() const;
    void zero_grad();

    // Backward from a scalar (numel()==1) root.
    void backward();

    std::shared_ptr<detail::Node> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// --- ops ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, float s);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose
Tensor transpose(const Tensor& a);
// row-wise softmax on [m,n]; max-subtraction stabilized
Tensor softmax_rows(const Tensor& x);
// 3x3 conv, zero pad 1, stride 1: [cin,h,w] x [cout,cin,3,3] -> [cout,h,w]
Tensor conv2d(const Tensor& x, const Tensor& kernels);
Tensor silu(const Tensor& x);
// normalize last axis to zero mean / unit variance (no affine)
Tensor layer_norm(const Tensor& x, float eps = 1e-5f);
// concatenate along axis; all other extents must match
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// mean of squared differences -> scalar; double-accumulated reduction
Tensor mse(const Tensor& a, const Tensor& b);
// sum of all elements -> scalar; double-accumulated reduction
Tensor sum(const Tensor& x);

// [m,n] + [n] broadcast over rows
Tensor add_row_bias(const Tensor& x, const Tensor& b);
// [c,h,w] + [c] broadcast over the spatial grid
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
// column slice of [m,n] -> [m,len]
Tensor slice_cols(const Tensor& x, int start, int len);
// same data, new shape (copy; numel preserved)
Tensor reshape(const Tensor& x, std::vector<int> shape);

std::string shape_str(const std::vector<int>& s);

}  // namespace refbridge
