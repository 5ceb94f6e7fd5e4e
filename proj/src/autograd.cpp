#include "excord/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "excord/errors.hpp"

namespace excord::autograd {

namespace {

std::shared_ptr<Node> make_node(std::size_t rows, std::size_t cols, std::initializer_list<Var> inputs) {
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->value.assign(rows * cols, 0.0);
    for (const Var& input : inputs) {
        if (input.requires_grad()) {
            node->requires_grad = true;
        }
    }
    if (node->requires_grad) {
        for (const Var& input : inputs) {
            if (input.requires_grad()) node->parents.push_back(input.node());
        }
    }
    return node;
}

void require(bool condition, const char* what) {
    if (!condition) throw ContractError(std::string("autograd shape mismatch: ") + what);
}

// Gradient buffer of an input if it participates in the graph.
double* grad_of(const Var& input) {
    if (!input.requires_grad()) return nullptr;
    input.node()->ensure_grad();
    return input.node()->grad.data();
}

}  // namespace

Var Var::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    require(values.size() == rows * cols, "constant size");
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->value = std::move(values);
    return Var(node);
}

Var Var::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    Var var = constant(rows, cols, std::move(values));
    var.node_->requires_grad = true;
    var.node_->grad.assign(var.node_->value.size(), 0.0);
    return var;
}

double Var::item() const {
    require(node_->value.size() == 1, "item() on a non-scalar");
    return node_->value[0];
}

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul inner dimension");
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    auto node = make_node(n, m, {a, b});
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) node->value[i * m + j] += x * bv[p * m + j];
        }
    }
    if (node->requires_grad) {
        node->backward = [a, b, n, k, m](Node& self) {
            if (double* ga = grad_of(a)) {
                const auto& bv = b.value();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += self.grad[i * m + j] * bv[p * m + j];
                        ga[i * k + p] += acc;
                    }
            }
            if (double* gb = grad_of(b)) {
                const auto& av = a.value();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double x = av[i * k + p];
                        if (x == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += x * self.grad[i * m + j];
                    }
            }
        };
    }
    return Var(node);
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
    auto node = make_node(a.rows(), a.cols(), {a, b});
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = a.value()[i] + b.value()[i];
    if (node->requires_grad) {
        node->backward = [a, b](Node& self) {
            for (const Var* input : {&a, &b}) {
                if (double* g = grad_of(*input))
                    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Var(node);
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
    const std::size_t n = a.rows(), c = a.cols();
    auto node = make_node(n, c, {a, row});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) node->value[i * c + j] = a.value()[i * c + j] + row.value()[j];
    if (node->requires_grad) {
        node->backward = [a, row, n, c](Node& self) {
            if (double* ga = grad_of(a))
                for (std::size_t i = 0; i < n * c; ++i) ga[i] += self.grad[i];
            if (double* gr = grad_of(row))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gr[j] += self.grad[i * c + j];
        };
    }
    return Var(node);
}

Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
    auto node = make_node(a.rows(), a.cols(), {a, b});
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = a.value()[i] * b.value()[i];
    if (node->requires_grad) {
        node->backward = [a, b](Node& self) {
            if (double* ga = grad_of(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b.value()[i];
            if (double* gb = grad_of(b))
                for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a.value()[i];
        };
    }
    return Var(node);
}

Var mul_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "mul_row");
    const std::size_t n = a.rows(), c = a.cols();
    auto node = make_node(n, c, {a, row});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) node->value[i * c + j] = a.value()[i * c + j] * row.value()[j];
    if (node->requires_grad) {
        node->backward = [a, row, n, c](Node& self) {
            if (double* ga = grad_of(a))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[i * c + j] * row.value()[j];
            if (double* gr = grad_of(row))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) gr[j] += self.grad[i * c + j] * a.value()[i * c + j];
        };
    }
    return Var(node);
}

Var tanh(const Var& a) {
    auto node = make_node(a.rows(), a.cols(), {a});
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::tanh(a.value()[i]);
    if (node->requires_grad) {
        node->backward = [a](Node& self) {
            if (double* ga = grad_of(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    ga[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
        };
    }
    return Var(node);
}

Var scale(const Var& a, double factor) {
    auto node = make_node(a.rows(), a.cols(), {a});
    for (std::size_t i = 0; i < node->value.size(); ++i) node->value[i] = a.value()[i] * factor;
    if (node->requires_grad) {
        node->backward = [a, factor](Node& self) {
            if (double* ga = grad_of(a))
                for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
        };
    }
    return Var(node);
}

Var sum(std::span<const Var> scalars) {
    auto node = std::make_shared<Node>();
    node->rows = node->cols = 1;
    node->value.assign(1, 0.0);
    std::vector<Var> inputs(scalars.begin(), scalars.end());
    for (const Var& s : inputs) {
        require(s.size() == 1, "sum of non-scalars");
        node->value[0] += s.item();
        if (s.requires_grad()) {
            node->requires_grad = true;
            node->parents.push_back(s.node());
        }
    }
    if (node->requires_grad) {
        node->backward = [inputs](Node& self) {
            for (const Var& s : inputs)
                if (double* g = grad_of(s)) g[0] += self.grad[0];
        };
    }
    return Var(node);
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    const std::size_t c = table.cols();
    std::vector<int> index(ids.begin(), ids.end());
    for (const int id : index) require(id >= 0 && static_cast<std::size_t>(id) < table.rows(), "gather index");
    auto node = make_node(index.size(), c, {table});
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy_n(table.value().begin() + static_cast<long>(static_cast<std::size_t>(index[i]) * c), c,
                    node->value.begin() + static_cast<long>(i * c));
    if (node->requires_grad) {
        node->backward = [table, index, c](Node& self) {
            if (double* g = grad_of(table))
                for (std::size_t i = 0; i < index.size(); ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        g[static_cast<std::size_t>(index[i]) * c + j] += self.grad[i * c + j];
        };
    }
    return Var(node);
}

Var outer_const(std::span<const double> weights, const Var& row) {
    require(row.rows() == 1, "outer_const row");
    const std::size_t n = weights.size(), c = row.cols();
    std::vector<double> w(weights.begin(), weights.end());
    auto node = make_node(n, c, {row});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) node->value[i * c + j] = w[i] * row.value()[j];
    if (node->requires_grad) {
        node->backward = [row, w, n, c](Node& self) {
            if (double* g = grad_of(row))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) g[j] += w[i] * self.grad[i * c + j];
        };
    }
    return Var(node);
}

Var shift_rows(const Var& a, int offset) {
    const std::size_t n = a.rows(), c = a.cols();
    auto node = make_node(n, c, {a});
    const auto source = [n, offset](std::size_t i) -> long {
        const long s = static_cast<long>(i) - offset;
        return (s >= 0 && s < static_cast<long>(n)) ? s : -1;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const long s = source(i);
        if (s < 0) continue;
        std::copy_n(a.value().begin() + s * static_cast<long>(c), c, node->value.begin() + static_cast<long>(i * c));
    }
    if (node->requires_grad) {
        node->backward = [a, n, c, source](Node& self) {
            if (double* g = grad_of(a))
                for (std::size_t i = 0; i < n; ++i) {
                    const long s = source(i);
                    if (s < 0) continue;
                    for (std::size_t j = 0; j < c; ++j) g[static_cast<std::size_t>(s) * c + j] += self.grad[i * c + j];
                }
        };
    }
    return Var(node);
}

Var window_mean_rows(const Var& a, std::size_t radius) {
    const std::size_t n = a.rows(), c = a.cols();
    auto node = make_node(n, c, {a});
    const auto bounds = [n, radius](std::size_t i) {
        const std::size_t lo = i >= radius ? i - radius : 0;
        const std::size_t hi = std::min(n - 1, i + radius);
        return std::make_pair(lo, hi);
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto [lo, hi] = bounds(i);
        const double inv = 1.0 / static_cast<double>(hi - lo + 1);
        for (std::size_t r = lo; r <= hi; ++r)
            for (std::size_t j = 0; j < c; ++j) node->value[i * c + j] += a.value()[r * c + j] * inv;
    }
    if (node->requires_grad) {
        node->backward = [a, n, c, bounds](Node& self) {
            if (double* g = grad_of(a))
                for (std::size_t i = 0; i < n; ++i) {
                    const auto [lo, hi] = bounds(i);
                    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
                    for (std::size_t r = lo; r <= hi; ++r)
                        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[i * c + j] * inv;
                }
        };
    }
    return Var(node);
}

Var masked_mean_rows(const Var& a, const std::vector<bool>& mask) {
    require(mask.size() == a.rows(), "masked_mean_rows mask");
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<bool> m(mask.begin(), mask.end());
    const auto count = static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
    auto node = make_node(1, c, {a});
    if (count == 0) return Var(node);
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i)
        if (m[i])
            for (std::size_t j = 0; j < c; ++j) node->value[j] += a.value()[i * c + j] * inv;
    if (node->requires_grad) {
        node->backward = [a, m, n, c, inv](Node& self) {
            if (double* g = grad_of(a))
                for (std::size_t i = 0; i < n; ++i)
                    if (m[i])
                        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] * inv;
        };
    }
    return Var(node);
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat of nothing");
    std::vector<Var> inputs(parts.begin(), parts.end());
    const std::size_t n = inputs.front().rows();
    std::size_t total = 0;
    for (const Var& p : inputs) {
        require(p.rows() == n, "concat_cols rows");
        total += p.cols();
    }
    auto node = std::make_shared<Node>();
    node->rows = n;
    node->cols = total;
    node->value.assign(n * total, 0.0);
    std::size_t offset = 0;
    for (const Var& p : inputs) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) node->value[i * total + offset + j] = p.value()[i * p.cols() + j];
        offset += p.cols();
        if (p.requires_grad()) {
            node->requires_grad = true;
            node->parents.push_back(p.node());
        }
    }
    if (node->requires_grad) {
        node->backward = [inputs, n, total](Node& self) {
            std::size_t offset = 0;
            for (const Var& p : inputs) {
                if (double* g = grad_of(p))
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < p.cols(); ++j) g[i * p.cols() + j] += self.grad[i * total + offset + j];
                offset += p.cols();
            }
        };
    }
    return Var(node);
}

Var masked_log_softmax(const Var& logits, const std::vector<bool>& mask) {
    require(mask.size() == logits.size(), "masked_log_softmax mask");
    std::vector<bool> m(mask.begin(), mask.end());
    require(std::find(m.begin(), m.end(), true) != m.end(), "masked_log_softmax with an empty mask");
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) max = std::isnan(logits.value()[i]) ? logits.value()[i] : std::max(max, logits.value()[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) z += std::exp(logits.value()[i] - max);
    const double log_z = max + std::log(z);
    auto node = make_node(logits.rows(), logits.cols(), {logits});
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) node->value[i] = logits.value()[i] - log_z;
    if (node->requires_grad) {
        node->backward = [logits, m](Node& self) {
            if (double* g = grad_of(logits)) {
                double total = 0.0;
                for (std::size_t i = 0; i < m.size(); ++i)
                    if (m[i]) total += self.grad[i];
                for (std::size_t i = 0; i < m.size(); ++i)
                    if (m[i]) g[i] += self.grad[i] - std::exp(self.value[i]) * total;
            }
        };
    }
    return Var(node);
}

Var pick(const Var& a, std::size_t index) {
    require(index < a.size(), "pick index");
    auto node = make_node(1, 1, {a});
    node->value[0] = a.value()[index];
    if (node->requires_grad) {
        node->backward = [a, index](Node& self) {
            if (double* g = grad_of(a)) g[index] += self.grad[0];
        };
    }
    return Var(node);
}

Var kl_divergence(const Var& log_p, const Var& log_q, const std::vector<bool>& mask) {
    require(log_p.size() == log_q.size() && mask.size() == log_p.size(), "kl_divergence geometry");
    std::vector<bool> m(mask.begin(), mask.end());
    auto node = make_node(1, 1, {log_p, log_q});
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        const double lp = log_p.value()[i];
        node->value[0] += std::exp(lp) * (lp - log_q.value()[i]);
    }
    if (node->requires_grad) {
        node->backward = [log_p, log_q, m](Node& self) {
            double* gp = grad_of(log_p);
            double* gq = grad_of(log_q);
            for (std::size_t i = 0; i < m.size(); ++i) {
                if (!m[i]) continue;
                const double lp = log_p.value()[i];
                const double p = std::exp(lp);
                if (gp) gp[i] += self.grad[0] * p * (lp - log_q.value()[i] + 1.0);
                if (gq) gq[i] -= self.grad[0] * p;
            }
        };
    }
    return Var(node);
}

Var detach(const Var& a) { return Var::constant(a.rows(), a.cols(), a.value()); }

void backward(const Var& root) {
    require(root.size() == 1, "backward from a non-scalar");
    if (!root.requires_grad()) return;
    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward) {
            node->ensure_grad();
            node->backward(*node);
        }
    }
}

}  // namespace excord::autograd
