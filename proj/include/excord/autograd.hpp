#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices of doubles. Enough to train the in-tree QA backbone and to make
// gradient blocking explicit: `detach` cuts the graph, so parameters used
// only behind a detach never receive gradient.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace excord::autograd {

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Var parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->value.size(); }
    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& mutable_value() { return node_->value; }
    // Empty until a backward pass reaches this node.
    const std::vector<double>& grad() const { return node_->grad; }
    double item() const;
    double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
// Adds a [1, c] row to every row of a [n, c] matrix.
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);
// Multiplies every row of a [n, c] matrix elementwise by a [1, c] row.
Var mul_row(const Var& a, const Var& row);
Var tanh(const Var& a);
Var scale(const Var& a, double factor);
Var sum(std::span<const Var> scalars);

// Rows of `table` selected by `ids`.
Var gather_rows(const Var& table, std::span<const int> ids);
// out[i] = weights[i] * row, a [n, c] matrix from constant weights and a [1, c] row.
Var outer_const(std::span<const double> weights, const Var& row);
// out[i] = a[i - offset] when in range, else zeros.
Var shift_rows(const Var& a, int offset);
// out[i] = mean of a[j] for |i - j| <= radius.
Var window_mean_rows(const Var& a, std::size_t radius);
// [1, c] mean of the rows where mask is set; zeros when no row is set.
Var masked_mean_rows(const Var& a, const std::vector<bool>& mask);
Var concat_cols(std::span<const Var> parts);

// Log-softmax over the flattened entries where mask is set. Masked entries
// hold 0 and receive no gradient.
Var masked_log_softmax(const Var& logits, const std::vector<bool>& mask);
// 1x1 selection of a flattened entry.
Var pick(const Var& a, std::size_t index);
// KL(p || q) = sum over mask of exp(lp) * (lp - lq) for log-probability vectors.
Var kl_divergence(const Var& log_p, const Var& log_q, const std::vector<bool>& mask);

// Same value, no gradient path to the inputs.
Var detach(const Var& a);

// Accumulates d(root)/d(node) into every reachable node that requires grad.
// `root` must be 1x1.
void backward(const Var& root);

}  // namespace excord::autograd
