#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "v2lab/rng.hpp"

namespace v2lab::nn {

namespace detail {

struct Node {
    std::vector<int> shape;
    std::vector<double> v;  // values
    std::vector<double> g;  // gradient, allocated lazily
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // scatters this->g into parents' g

    int numel() const {
        int n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (g.empty()) g.assign(static_cast<std::size_t>(numel()), 0.0);
    }
};

}  // namespace detail

/// Handle to one node of a reverse-mode autodiff graph. Values and gradients
/// are double precision; graphs are built per forward pass and discarded
/// after backward(). Only leaves are expected to carry gradients across
/// passes (gradient accumulation).
class Var {
   public:
    Var() = default;
    explicit Var(std::shared_ptr<detail::Node> n) : node(std::move(n)) {}

    static Var leaf(std::vector<int> shape, bool requires_grad = true);
    static Var constant(std::vector<int> shape, std::vector<double> values);
    static Var scalar(double v);

    bool defined() const { return node != nullptr; }
    const std::vector<int>& shape() const { return node->shape; }
    int numel() const { return node->numel(); }
    bool requires_grad() const { return node->requires_grad; }

    std::vector<double>& value() { return node->v; }
    const std::vector<double>& value() const { return node->v; }
    double scalar_value() const;

    bool has_grad() const { return node && !node->g.empty(); }
    std::vector<double>& grad() {
        node->ensure_grad();
        return node->g;
    }
    void drop_grad() { node->g.clear(); }

    std::shared_ptr<detail::Node> node;
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate; interior
/// gradients live only for the sweep.
void backward(const Var& root);

bool all_finite(const Var& x);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);  // same shape, or either side scalar
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);  // b same shape or scalar
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var neg(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var tanh_(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);

// ---- reductions ----
Var sum(const Var& a);   // -> [1]
Var mean(const Var& a);  // -> [1]
Var row_sum(const Var& a);        // [N,M] -> [N]
Var logsumexp_rows(const Var& a); // [N,M] -> [N]

// ---- linear algebra on 2-D shapes ----
Var matmul(const Var& a, const Var& b);    // [N,K]x[K,M] -> [N,M]
Var matmul_t(const Var& a, const Var& b);  // [N,K]x[M,K] -> [N,M] (a * b^T)
Var transpose2d(const Var& a);
Var linear(const Var& x, const Var& w, const Var& b);  // x*w + row-broadcast b [1,M]
Var add_rowvec(const Var& a, const Var& b);            // [N,M] + [1,M]
Var softmax_rows(const Var& a);
Var div_rows(const Var& a, const Var& s);  // [N,M] / per-row scalar [N]
Var diag2d(const Var& a);                  // [N,N] -> [N]
Var gather_rows(const Var& a, std::vector<int> idx);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, int begin, int end);
Var reshape(const Var& a, std::vector<int> shape);

// ---- spatial ops on [C,H,W] shapes ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// weight layout [IN, OUT, KH, KW]; output size (H-1)*stride - 2*pad + KH
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);
Var spatial_mean(const Var& x);               // [C,H,W] -> [1,C]
Var chan_scale(const Var& x, const Var& s);   // s: [1,C]
Var chan_add(const Var& x, const Var& t);     // t: [1,C]
Var rows_to_chw(const Var& a, int h, int w);  // [h*w, D] -> [D,h,w]
Var crop2d(const Var& x, int h, int w);       // keep the top-left h x w window

// ---- loss primitives ----
/// Mean over elements of binary cross-entropy with logits against a constant
/// target in [0,1]; numerically stable for large |logit|.
Var bce_with_logits_mean(const Var& logits, const std::vector<double>& target);

// ---- parameter initialization ----
Var randn_leaf(std::vector<int> shape, Rng& rng, double stddev);
Var zeros_leaf(std::vector<int> shape);
Var full_leaf(std::vector<int> shape, double value);

}  // namespace v2lab::nn
