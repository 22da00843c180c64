#include "v2lab/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace v2lab::nn {

using detail::Node;

namespace {

std::shared_ptr<Node> make_node(std::vector<int> shape,
                                std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->v.assign(static_cast<std::size_t>(n->numel()), 0.0);
    for (const auto& p : parents) {
        if (p == nullptr) throw std::invalid_argument("nn: undefined operand");
        if (p->requires_grad) n->requires_grad = true;
    }
    n->parents = std::move(parents);
    return n;
}

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

int rows_of(const Var& a) { return a.shape()[0]; }
int cols_of(const Var& a) { return a.shape()[1]; }

bool is_2d(const Var& a) { return a.shape().size() == 2; }
bool is_3d(const Var& a) { return a.shape().size() == 3; }

/// Shared skeleton for elementwise binary ops with scalar broadcast on
/// either side.
template <typename FwdFn, typename BwdFn>
Var elementwise2(const Var& a, const Var& b, const char* name, FwdFn fwd, BwdFn bwd) {
    const int na = a.numel(), nb = b.numel();
    check(na == nb || na == 1 || nb == 1, name);
    const int n = std::max(na, nb);
    auto out = make_node(na >= nb ? a.shape() : b.shape(), {a.node, b.node});
    const bool sa = na == 1, sb = nb == 1;
    for (int i = 0; i < n; ++i) {
        out->v[static_cast<std::size_t>(i)] =
            fwd(a.node->v[sa ? 0 : static_cast<std::size_t>(i)],
                b.node->v[sb ? 0 : static_cast<std::size_t>(i)]);
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [an, bn, on, n, sa, sb, bwd] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const std::size_t ia = sa ? 0 : static_cast<std::size_t>(i);
                const std::size_t ib = sb ? 0 : static_cast<std::size_t>(i);
                double da = 0.0, db = 0.0;
                bwd(on->g[static_cast<std::size_t>(i)], an->v[ia], bn->v[ib],
                    on->v[static_cast<std::size_t>(i)], da, db);
                if (an->requires_grad) an->g[ia] += da;
                if (bn->requires_grad) bn->g[ib] += db;
            }
        };
    }
    return Var(out);
}

template <typename FwdFn, typename BwdFn>
Var elementwise1(const Var& a, FwdFn fwd, BwdFn bwd) {
    auto out = make_node(a.shape(), {a.node});
    const int n = a.numel();
    for (int i = 0; i < n; ++i) {
        out->v[static_cast<std::size_t>(i)] = fwd(a.node->v[static_cast<std::size_t>(i)]);
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, bwd] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                an->g[ii] += bwd(on->g[ii], an->v[ii], on->v[ii]);
            }
        };
    }
    return Var(out);
}

}  // namespace

Var Var::leaf(std::vector<int> shape, bool requires_grad) {
    auto n = make_node(std::move(shape), {});
    n->requires_grad = requires_grad;
    return Var(n);
}

Var Var::constant(std::vector<int> shape, std::vector<double> values) {
    auto n = make_node(std::move(shape), {});
    check(static_cast<int>(values.size()) == n->numel(), "Var::constant: value count != shape");
    n->v = std::move(values);
    return Var(n);
}

Var Var::scalar(double v) { return constant({1}, {v}); }

double Var::scalar_value() const {
    check(node != nullptr && node->numel() == 1, "Var::scalar_value: not a scalar");
    return node->v[0];
}

void backward(const Var& root) {
    Node* r = root.node.get();
    check(r != nullptr, "backward: undefined root");
    check(r->numel() == 1, "backward: root must be a scalar");
    check(r->requires_grad, "backward: root does not require grad");

    // Reverse postorder over the requires-grad subgraph = topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        std::size_t i;
    };
    std::vector<Frame> stack{{r, 0}};
    seen.insert(r);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.i < f.n->parents.size()) {
            Node* p = f.n->parents[f.i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    r->ensure_grad();
    r->g[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

bool all_finite(const Var& x) {
    for (double v : x.value()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Var add(const Var& a, const Var& b) {
    return elementwise2(
        a, b, "add: shape mismatch", [](double x, double y) { return x + y; },
        [](double g, double, double, double, double& da, double& db) {
            da = g;
            db = g;
        });
}

Var sub(const Var& a, const Var& b) {
    return elementwise2(
        a, b, "sub: shape mismatch", [](double x, double y) { return x - y; },
        [](double g, double, double, double, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Var mul(const Var& a, const Var& b) {
    return elementwise2(
        a, b, "mul: shape mismatch", [](double x, double y) { return x * y; },
        [](double g, double x, double y, double, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Var divide(const Var& a, const Var& b) {
    return elementwise2(
        a, b, "divide: shape mismatch", [](double x, double y) { return x / y; },
        [](double g, double x, double y, double, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

Var add_scalar(const Var& a, double c) {
    return elementwise1(
        a, [c](double x) { return x + c; }, [](double g, double, double) { return g; });
}

Var mul_scalar(const Var& a, double c) {
    return elementwise1(
        a, [c](double x) { return x * c; }, [c](double g, double, double) { return g * c; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var exp_(const Var& a) {
    return elementwise1(
        a, [](double x) { return std::exp(x); },
        [](double g, double, double y) { return g * y; });
}

Var log_(const Var& a) {
    return elementwise1(
        a, [](double x) { return std::log(x); },
        [](double g, double x, double) { return g / x; });
}

Var sqrt_(const Var& a) {
    return elementwise1(
        a, [](double x) { return std::sqrt(x); },
        [](double g, double, double y) { return 0.5 * g / y; });
}

Var tanh_(const Var& a) {
    return elementwise1(
        a, [](double x) { return std::tanh(x); },
        [](double g, double, double y) { return g * (1.0 - y * y); });
}

Var sigmoid(const Var& a) {
    return elementwise1(
        a,
        [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double g, double, double y) { return g * y * (1.0 - y); });
}

Var relu(const Var& a) {
    return elementwise1(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Var sum(const Var& a) {
    auto out = make_node({1}, {a.node});
    double s = 0.0;
    for (double v : a.node->v) s += v;
    out->v[0] = s;
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on] {
            an->ensure_grad();
            for (double& gv : an->g) gv += on->g[0];
        };
    }
    return Var(out);
}

Var mean(const Var& a) { return mul_scalar(sum(a), 1.0 / a.numel()); }

Var row_sum(const Var& a) {
    check(is_2d(a), "row_sum: expected 2-D input");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({n}, {a.node});
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += a.node->v[static_cast<std::size_t>(i) * m + j];
        out->v[static_cast<std::size_t>(i)] = s;
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, m] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double g = on->g[static_cast<std::size_t>(i)];
                for (int j = 0; j < m; ++j) an->g[static_cast<std::size_t>(i) * m + j] += g;
            }
        };
    }
    return Var(out);
}

Var logsumexp_rows(const Var& a) {
    check(is_2d(a), "logsumexp_rows: expected 2-D input");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({n}, {a.node});
    for (int i = 0; i < n; ++i) {
        const double* row = a.node->v.data() + static_cast<std::size_t>(i) * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
        out->v[static_cast<std::size_t>(i)] = mx + std::log(s);
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, m] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double g = on->g[static_cast<std::size_t>(i)];
                const double lse = on->v[static_cast<std::size_t>(i)];
                for (int j = 0; j < m; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i) * m + j;
                    an->g[ij] += g * std::exp(an->v[ij] - lse);
                }
            }
        };
    }
    return Var(out);
}

Var matmul(const Var& a, const Var& b) {
    check(is_2d(a) && is_2d(b) && cols_of(a) == rows_of(b), "matmul: shape mismatch");
    const int n = rows_of(a), k = cols_of(a), m = cols_of(b);
    auto out = make_node({n, m}, {a.node, b.node});
    const double* av = a.node->v.data();
    const double* bv = b.node->v.data();
    double* ov = out->v.data();
    for (int i = 0; i < n; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double aik = av[static_cast<std::size_t>(i) * k + kk];
            if (aik == 0.0) continue;
            const double* brow = bv + static_cast<std::size_t>(kk) * m;
            double* orow = ov + static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [an, bn, on, n, k, m] {
            if (an->requires_grad) {
                an->ensure_grad();
                // da = g * b^T
                for (int i = 0; i < n; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        const double* grow = on->g.data() + static_cast<std::size_t>(i) * m;
                        const double* brow = bn->v.data() + static_cast<std::size_t>(kk) * m;
                        double acc = 0.0;
                        for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                        an->g[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // db = a^T * g
                for (int kk = 0; kk < k; ++kk) {
                    for (int i = 0; i < n; ++i) {
                        const double aik = an->v[static_cast<std::size_t>(i) * k + kk];
                        if (aik == 0.0) continue;
                        const double* grow = on->g.data() + static_cast<std::size_t>(i) * m;
                        double* brow = bn->g.data() + static_cast<std::size_t>(kk) * m;
                        for (int j = 0; j < m; ++j) brow[j] += aik * grow[j];
                    }
                }
            }
        };
    }
    return Var(out);
}

Var matmul_t(const Var& a, const Var& b) {
    check(is_2d(a) && is_2d(b) && cols_of(a) == cols_of(b), "matmul_t: shape mismatch");
    const int n = rows_of(a), k = cols_of(a), m = rows_of(b);
    auto out = make_node({n, m}, {a.node, b.node});
    for (int i = 0; i < n; ++i) {
        const double* arow = a.node->v.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < m; ++j) {
            const double* brow = b.node->v.data() + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            out->v[static_cast<std::size_t>(i) * m + j] = acc;
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [an, bn, on, n, k, m] {
            if (an->requires_grad) {
                an->ensure_grad();
                // da = g * b
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < m; ++j) {
                        const double g = on->g[static_cast<std::size_t>(i) * m + j];
                        if (g == 0.0) continue;
                        const double* brow = bn->v.data() + static_cast<std::size_t>(j) * k;
                        double* arow = an->g.data() + static_cast<std::size_t>(i) * k;
                        for (int kk = 0; kk < k; ++kk) arow[kk] += g * brow[kk];
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // db = g^T * a
                for (int j = 0; j < m; ++j) {
                    for (int i = 0; i < n; ++i) {
                        const double g = on->g[static_cast<std::size_t>(i) * m + j];
                        if (g == 0.0) continue;
                        const double* arow = an->v.data() + static_cast<std::size_t>(i) * k;
                        double* brow = bn->g.data() + static_cast<std::size_t>(j) * k;
                        for (int kk = 0; kk < k; ++kk) brow[kk] += g * arow[kk];
                    }
                }
            }
        };
    }
    return Var(out);
}

Var transpose2d(const Var& a) {
    check(is_2d(a), "transpose2d: expected 2-D input");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({m, n}, {a.node});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            out->v[static_cast<std::size_t>(j) * n + i] = a.node->v[static_cast<std::size_t>(i) * m + j];
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, m] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    an->g[static_cast<std::size_t>(i) * m + j] += on->g[static_cast<std::size_t>(j) * n + i];
                }
            }
        };
    }
    return Var(out);
}

Var add_rowvec(const Var& a, const Var& b) {
    check(is_2d(a), "add_rowvec: expected 2-D lhs");
    check(b.numel() == cols_of(a), "add_rowvec: bias size mismatch");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({n, m}, {a.node, b.node});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            out->v[static_cast<std::size_t>(i) * m + j] =
                a.node->v[static_cast<std::size_t>(i) * m + j] + b.node->v[static_cast<std::size_t>(j)];
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [an, bn, on, n, m] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    const double g = on->g[static_cast<std::size_t>(i) * m + j];
                    if (an->requires_grad) an->g[static_cast<std::size_t>(i) * m + j] += g;
                    if (bn->requires_grad) bn->g[static_cast<std::size_t>(j)] += g;
                }
            }
        };
    }
    return Var(out);
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_rowvec(matmul(x, w), b); }

Var softmax_rows(const Var& a) {
    check(is_2d(a), "softmax_rows: expected 2-D input");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({n, m}, {a.node});
    for (int i = 0; i < n; ++i) {
        const double* row = a.node->v.data() + static_cast<std::size_t>(i) * m;
        double* orow = out->v.data() + static_cast<std::size_t>(i) * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < m; ++j) orow[j] /= s;
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, m] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* y = on->v.data() + static_cast<std::size_t>(i) * m;
                const double* g = on->g.data() + static_cast<std::size_t>(i) * m;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += g[j] * y[j];
                double* da = an->g.data() + static_cast<std::size_t>(i) * m;
                for (int j = 0; j < m; ++j) da[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return Var(out);
}

Var div_rows(const Var& a, const Var& s) {
    check(is_2d(a), "div_rows: expected 2-D lhs");
    check(s.numel() == rows_of(a), "div_rows: divisor size mismatch");
    const int n = rows_of(a), m = cols_of(a);
    auto out = make_node({n, m}, {a.node, s.node});
    for (int i = 0; i < n; ++i) {
        const double d = s.node->v[static_cast<std::size_t>(i)];
        for (int j = 0; j < m; ++j) {
            out->v[static_cast<std::size_t>(i) * m + j] =
                a.node->v[static_cast<std::size_t>(i) * m + j] / d;
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* sn = s.node.get();
        Node* on = out.get();
        out->backprop = [an, sn, on, n, m] {
            if (an->requires_grad) an->ensure_grad();
            if (sn->requires_grad) sn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double d = sn->v[static_cast<std::size_t>(i)];
                double acc = 0.0;
                for (int j = 0; j < m; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i) * m + j;
                    const double g = on->g[ij];
                    if (an->requires_grad) an->g[ij] += g / d;
                    acc += g * on->v[ij];
                }
                if (sn->requires_grad) sn->g[static_cast<std::size_t>(i)] -= acc / d;
            }
        };
    }
    return Var(out);
}

Var diag2d(const Var& a) {
    check(is_2d(a) && rows_of(a) == cols_of(a), "diag2d: expected square input");
    const int n = rows_of(a);
    auto out = make_node({n}, {a.node});
    for (int i = 0; i < n; ++i) {
        out->v[static_cast<std::size_t>(i)] = a.node->v[static_cast<std::size_t>(i) * n + i];
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                an->g[static_cast<std::size_t>(i) * n + i] += on->g[static_cast<std::size_t>(i)];
            }
        };
    }
    return Var(out);
}

Var gather_rows(const Var& a, std::vector<int> idx) {
    check(is_2d(a), "gather_rows: expected 2-D input");
    const int n = rows_of(a), m = cols_of(a);
    for (int i : idx) check(i >= 0 && i < n, "gather_rows: index out of range");
    auto out = make_node({static_cast<int>(idx.size()), m}, {a.node});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = a.node->v.data() + static_cast<std::size_t>(idx[r]) * m;
        double* dst = out->v.data() + r * m;
        for (int j = 0; j < m; ++j) dst[j] = src[j];
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, idx = std::move(idx), m] {
            an->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const double* g = on->g.data() + r * m;
                double* dst = an->g.data() + static_cast<std::size_t>(idx[r]) * m;
                for (int j = 0; j < m; ++j) dst[j] += g[j];
            }
        };
    }
    return Var(out);
}

Var concat_rows(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_rows: no parts");
    const int m = cols_of(parts.front());
    int n = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Var& p : parts) {
        check(is_2d(p) && cols_of(p) == m, "concat_rows: column mismatch");
        n += rows_of(p);
        parents.push_back(p.node);
    }
    auto out = make_node({n, m}, std::move(parents));
    std::size_t off = 0;
    for (const Var& p : parts) {
        for (double v : p.node->v) out->v[off++] = v;
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backprop = [on] {
            std::size_t off = 0;
            for (const auto& p : on->parents) {
                const std::size_t cnt = p->v.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < cnt; ++i) p->g[i] += on->g[off + i];
                }
                off += cnt;
            }
        };
    }
    return Var(out);
}

Var concat_cols(const Var& a, const Var& b) {
    check(is_2d(a) && is_2d(b) && rows_of(a) == rows_of(b), "concat_cols: row mismatch");
    const int n = rows_of(a), ma = cols_of(a), mb = cols_of(b);
    auto out = make_node({n, ma + mb}, {a.node, b.node});
    for (int i = 0; i < n; ++i) {
        double* dst = out->v.data() + static_cast<std::size_t>(i) * (ma + mb);
        const double* sa = a.node->v.data() + static_cast<std::size_t>(i) * ma;
        const double* sb = b.node->v.data() + static_cast<std::size_t>(i) * mb;
        for (int j = 0; j < ma; ++j) dst[j] = sa[j];
        for (int j = 0; j < mb; ++j) dst[ma + j] = sb[j];
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [an, bn, on, n, ma, mb] {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* g = on->g.data() + static_cast<std::size_t>(i) * (ma + mb);
                if (an->requires_grad) {
                    double* da = an->g.data() + static_cast<std::size_t>(i) * ma;
                    for (int j = 0; j < ma; ++j) da[j] += g[j];
                }
                if (bn->requires_grad) {
                    double* db = bn->g.data() + static_cast<std::size_t>(i) * mb;
                    for (int j = 0; j < mb; ++j) db[j] += g[ma + j];
                }
            }
        };
    }
    return Var(out);
}

Var slice_cols(const Var& a, int begin, int end) {
    check(is_2d(a) && begin >= 0 && end > begin && end <= cols_of(a), "slice_cols: bad range");
    const int n = rows_of(a), m = cols_of(a), w = end - begin;
    auto out = make_node({n, w}, {a.node});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < w; ++j) {
            out->v[static_cast<std::size_t>(i) * w + j] =
                a.node->v[static_cast<std::size_t>(i) * m + begin + j];
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, n, m, w, begin] {
            an->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < w; ++j) {
                    an->g[static_cast<std::size_t>(i) * m + begin + j] +=
                        on->g[static_cast<std::size_t>(i) * w + j];
                }
            }
        };
    }
    return Var(out);
}

Var reshape(const Var& a, std::vector<int> shape) {
    auto out = make_node(std::move(shape), {a.node});
    check(out->numel() == a.numel(), "reshape: element count mismatch");
    out->v = a.node->v;
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on] {
            an->ensure_grad();
            for (std::size_t i = 0; i < an->g.size(); ++i) an->g[i] += on->g[i];
        };
    }
    return Var(out);
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(is_3d(x) && w.shape().size() == 4, "conv2d: expected [C,H,W] input and 4-D weight");
    const int ic = x.shape()[0], h = x.shape()[1], ww = x.shape()[2];
    const int oc = w.shape()[0], kc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    check(kc == ic, "conv2d: channel mismatch");
    check(b.numel() == oc, "conv2d: bias size mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;
    check(oh > 0 && ow > 0, "conv2d: output would be empty");

    auto out = make_node({oc, oh, ow}, {x.node, w.node, b.node});
    const double* xv = x.node->v.data();
    const double* wv = w.node->v.data();
    double* ov = out->v.data();
    for (int o = 0; o < oc; ++o) {
        const double bias = b.node->v[static_cast<std::size_t>(o)];
        double* oplane = ov + static_cast<std::size_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) oplane[i] = bias;
        for (int c = 0; c < ic; ++c) {
            const double* xplane = xv + static_cast<std::size_t>(c) * h * ww;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wgt =
                        wv[((static_cast<std::size_t>(o) * ic + c) * kh + ky) * kw + kx];
                    if (wgt == 0.0) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* orow = oplane + static_cast<std::size_t>(oy) * ow;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * ww;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= ww) continue;
                            orow[ox] += wgt * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* wn = w.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [xn, wn, bn, on, ic, h, ww, oc, kh, kw, oh, ow, stride, pad] {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (int o = 0; o < oc; ++o) {
                const double* gplane = on->g.data() + static_cast<std::size_t>(o) * oh * ow;
                if (bn->requires_grad) {
                    double acc = 0.0;
                    for (int i = 0; i < oh * ow; ++i) acc += gplane[i];
                    bn->g[static_cast<std::size_t>(o)] += acc;
                }
                for (int c = 0; c < ic; ++c) {
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::size_t wi =
                                ((static_cast<std::size_t>(o) * ic + c) * kh + ky) * kw + kx;
                            const double wgt = wn->v[wi];
                            double wacc = 0.0;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                const double* grow = gplane + static_cast<std::size_t>(oy) * ow;
                                const std::size_t xoff =
                                    (static_cast<std::size_t>(c) * h + iy) * ww;
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= ww) continue;
                                    const double g = grow[ox];
                                    if (g == 0.0) continue;
                                    if (wn->requires_grad) wacc += g * xn->v[xoff + ix];
                                    if (xn->requires_grad) xn->g[xoff + ix] += g * wgt;
                                }
                            }
                            if (wn->requires_grad) wn->g[wi] += wacc;
                        }
                    }
                }
            }
        };
    }
    return Var(out);
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check(is_3d(x) && w.shape().size() == 4, "conv_transpose2d: expected [C,H,W] and 4-D weight");
    const int ic = x.shape()[0], h = x.shape()[1], ww = x.shape()[2];
    check(w.shape()[0] == ic, "conv_transpose2d: channel mismatch");
    const int oc = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    check(b.numel() == oc, "conv_transpose2d: bias size mismatch");
    const int oh = (h - 1) * stride - 2 * pad + kh;
    const int ow = (ww - 1) * stride - 2 * pad + kw;
    check(oh > 0 && ow > 0, "conv_transpose2d: output would be empty");

    auto out = make_node({oc, oh, ow}, {x.node, w.node, b.node});
    for (int o = 0; o < oc; ++o) {
        const double bias = b.node->v[static_cast<std::size_t>(o)];
        double* oplane = out->v.data() + static_cast<std::size_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) oplane[i] = bias;
    }
    for (int c = 0; c < ic; ++c) {
        const double* xplane = x.node->v.data() + static_cast<std::size_t>(c) * h * ww;
        for (int o = 0; o < oc; ++o) {
            double* oplane = out->v.data() + static_cast<std::size_t>(o) * oh * ow;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wgt =
                        w.node->v[((static_cast<std::size_t>(c) * oc + o) * kh + ky) * kw + kx];
                    if (wgt == 0.0) continue;
                    for (int iy = 0; iy < h; ++iy) {
                        const int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= oh) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * ww;
                        double* orow = oplane + static_cast<std::size_t>(oy) * ow;
                        for (int ix = 0; ix < ww; ++ix) {
                            const int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= ow) continue;
                            orow[ox] += wgt * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* wn = w.node.get();
        Node* bn = b.node.get();
        Node* on = out.get();
        out->backprop = [xn, wn, bn, on, ic, h, ww, oc, kh, kw, oh, ow, stride, pad] {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (bn->requires_grad) {
                for (int o = 0; o < oc; ++o) {
                    const double* gplane = on->g.data() + static_cast<std::size_t>(o) * oh * ow;
                    double acc = 0.0;
                    for (int i = 0; i < oh * ow; ++i) acc += gplane[i];
                    bn->g[static_cast<std::size_t>(o)] += acc;
                }
            }
            for (int c = 0; c < ic; ++c) {
                for (int o = 0; o < oc; ++o) {
                    const double* gplane = on->g.data() + static_cast<std::size_t>(o) * oh * ow;
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const std::size_t wi =
                                ((static_cast<std::size_t>(c) * oc + o) * kh + ky) * kw + kx;
                            const double wgt = wn->v[wi];
                            double wacc = 0.0;
                            for (int iy = 0; iy < h; ++iy) {
                                const int oy = iy * stride - pad + ky;
                                if (oy < 0 || oy >= oh) continue;
                                const double* grow = gplane + static_cast<std::size_t>(oy) * ow;
                                const std::size_t xoff =
                                    (static_cast<std::size_t>(c) * h + iy) * ww;
                                for (int ix = 0; ix < ww; ++ix) {
                                    const int ox = ix * stride - pad + kx;
                                    if (ox < 0 || ox >= ow) continue;
                                    const double g = grow[ox];
                                    if (g == 0.0) continue;
                                    if (wn->requires_grad) wacc += g * xn->v[xoff + ix];
                                    if (xn->requires_grad) xn->g[xoff + ix] += g * wgt;
                                }
                            }
                            if (wn->requires_grad) wn->g[wi] += wacc;
                        }
                    }
                }
            }
        };
    }
    return Var(out);
}

Var upsample_nearest2x(const Var& x) {
    check(is_3d(x), "upsample_nearest2x: expected [C,H,W] input");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    auto out = make_node({c, 2 * h, 2 * w}, {x.node});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                const double v = x.node->v[(static_cast<std::size_t>(ch) * h + y) * w + xx];
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        out->v[(static_cast<std::size_t>(ch) * 2 * h + 2 * y + dy) * 2 * w + 2 * xx +
                               dx] = v;
                    }
                }
            }
        }
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* on = out.get();
        out->backprop = [xn, on, c, h, w] {
            xn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) {
                        double acc = 0.0;
                        for (int dy = 0; dy < 2; ++dy) {
                            for (int dx = 0; dx < 2; ++dx) {
                                acc += on->g[(static_cast<std::size_t>(ch) * 2 * h + 2 * y + dy) *
                                                 2 * w +
                                             2 * xx + dx];
                            }
                        }
                        xn->g[(static_cast<std::size_t>(ch) * h + y) * w + xx] += acc;
                    }
                }
            }
        };
    }
    return Var(out);
}

Var spatial_mean(const Var& x) {
    check(is_3d(x), "spatial_mean: expected [C,H,W] input");
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    auto out = make_node({1, c}, {x.node});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const double* plane = x.node->v.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) s += plane[i];
        out->v[static_cast<std::size_t>(ch)] = s / hw;
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* on = out.get();
        out->backprop = [xn, on, c, hw] {
            xn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double g = on->g[static_cast<std::size_t>(ch)] / hw;
                double* plane = xn->g.data() + static_cast<std::size_t>(ch) * hw;
                for (int i = 0; i < hw; ++i) plane[i] += g;
            }
        };
    }
    return Var(out);
}

Var chan_scale(const Var& x, const Var& s) {
    check(is_3d(x), "chan_scale: expected [C,H,W] input");
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    check(s.numel() == c, "chan_scale: scale size mismatch");
    auto out = make_node(x.shape(), {x.node, s.node});
    for (int ch = 0; ch < c; ++ch) {
        const double sv = s.node->v[static_cast<std::size_t>(ch)];
        const double* src = x.node->v.data() + static_cast<std::size_t>(ch) * hw;
        double* dst = out->v.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) dst[i] = src[i] * sv;
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* sn = s.node.get();
        Node* on = out.get();
        out->backprop = [xn, sn, on, c, hw] {
            if (xn->requires_grad) xn->ensure_grad();
            if (sn->requires_grad) sn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double sv = sn->v[static_cast<std::size_t>(ch)];
                const double* g = on->g.data() + static_cast<std::size_t>(ch) * hw;
                const double* xv = xn->v.data() + static_cast<std::size_t>(ch) * hw;
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) {
                    if (xn->requires_grad) xn->g[static_cast<std::size_t>(ch) * hw + i] += g[i] * sv;
                    acc += g[i] * xv[i];
                }
                if (sn->requires_grad) sn->g[static_cast<std::size_t>(ch)] += acc;
            }
        };
    }
    return Var(out);
}

Var chan_add(const Var& x, const Var& t) {
    check(is_3d(x), "chan_add: expected [C,H,W] input");
    const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    check(t.numel() == c, "chan_add: shift size mismatch");
    auto out = make_node(x.shape(), {x.node, t.node});
    for (int ch = 0; ch < c; ++ch) {
        const double tv = t.node->v[static_cast<std::size_t>(ch)];
        const double* src = x.node->v.data() + static_cast<std::size_t>(ch) * hw;
        double* dst = out->v.data() + static_cast<std::size_t>(ch) * hw;
        for (int i = 0; i < hw; ++i) dst[i] = src[i] + tv;
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* tn = t.node.get();
        Node* on = out.get();
        out->backprop = [xn, tn, on, c, hw] {
            if (xn->requires_grad) xn->ensure_grad();
            if (tn->requires_grad) tn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                const double* g = on->g.data() + static_cast<std::size_t>(ch) * hw;
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) {
                    if (xn->requires_grad) xn->g[static_cast<std::size_t>(ch) * hw + i] += g[i];
                    acc += g[i];
                }
                if (tn->requires_grad) tn->g[static_cast<std::size_t>(ch)] += acc;
            }
        };
    }
    return Var(out);
}

Var rows_to_chw(const Var& a, int h, int w) {
    check(is_2d(a) && rows_of(a) == h * w, "rows_to_chw: row count must equal h*w");
    const int d = cols_of(a);
    auto out = make_node({d, h, w}, {a.node});
    for (int r = 0; r < h * w; ++r) {
        for (int f = 0; f < d; ++f) {
            out->v[static_cast<std::size_t>(f) * h * w + r] =
                a.node->v[static_cast<std::size_t>(r) * d + f];
        }
    }
    if (out->requires_grad) {
        Node* an = a.node.get();
        Node* on = out.get();
        out->backprop = [an, on, h, w, d] {
            an->ensure_grad();
            for (int r = 0; r < h * w; ++r) {
                for (int f = 0; f < d; ++f) {
                    an->g[static_cast<std::size_t>(r) * d + f] +=
                        on->g[static_cast<std::size_t>(f) * h * w + r];
                }
            }
        };
    }
    return Var(out);
}

Var crop2d(const Var& x, int h, int w) {
    check(is_3d(x), "crop2d: expected [C,H,W] input");
    const int c = x.shape()[0], ih = x.shape()[1], iw = x.shape()[2];
    check(h > 0 && w > 0 && h <= ih && w <= iw, "crop2d: window exceeds input");
    if (h == ih && w == iw) return x;
    auto out = make_node({c, h, w}, {x.node});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const double* src = x.node->v.data() + (static_cast<std::size_t>(ch) * ih + y) * iw;
            double* dst = out->v.data() + (static_cast<std::size_t>(ch) * h + y) * w;
            for (int xx = 0; xx < w; ++xx) dst[xx] = src[xx];
        }
    }
    if (out->requires_grad) {
        Node* xn = x.node.get();
        Node* on = out.get();
        out->backprop = [xn, on, c, h, w, ih, iw] {
            xn->ensure_grad();
            for (int ch = 0; ch < c; ++ch) {
                for (int y = 0; y < h; ++y) {
                    const double* g = on->g.data() + (static_cast<std::size_t>(ch) * h + y) * w;
                    double* dst = xn->g.data() + (static_cast<std::size_t>(ch) * ih + y) * iw;
                    for (int xx = 0; xx < w; ++xx) dst[xx] += g[xx];
                }
            }
        };
    }
    return Var(out);
}

Var bce_with_logits_mean(const Var& logits, const std::vector<double>& target) {
    check(static_cast<int>(target.size()) == logits.numel(),
          "bce_with_logits_mean: target size mismatch");
    auto out = make_node({1}, {logits.node});
    const int n = logits.numel();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double l = logits.node->v[static_cast<std::size_t>(i)];
        const double t = target[static_cast<std::size_t>(i)];
        acc += l >= 0.0 ? (1.0 - t) * l + std::log1p(std::exp(-l))
                        : -t * l + std::log1p(std::exp(l));
    }
    out->v[0] = acc / n;
    if (out->requires_grad) {
        Node* ln = logits.node.get();
        Node* on = out.get();
        out->backprop = [ln, on, target, n] {
            ln->ensure_grad();
            const double g = on->g[0] / n;
            for (int i = 0; i < n; ++i) {
                const double l = ln->v[static_cast<std::size_t>(i)];
                const double s =
                    l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
                ln->g[static_cast<std::size_t>(i)] += g * (s - target[static_cast<std::size_t>(i)]);
            }
        };
    }
    return Var(out);
}

Var randn_leaf(std::vector<int> shape, Rng& rng, double stddev) {
    Var v = Var::leaf(std::move(shape), true);
    for (double& x : v.value()) x = rng.normal() * stddev;
    return v;
}

Var zeros_leaf(std::vector<int> shape) { return Var::leaf(std::move(shape), true); }

Var full_leaf(std::vector<int> shape, double value) {
    Var v = Var::leaf(std::move(shape), true);
    for (double& x : v.value()) x = value;
    return v;
}

}  // namespace v2lab::nn
