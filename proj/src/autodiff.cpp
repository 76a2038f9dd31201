#include "quosr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace quosr::ad {

namespace {

using NodePtr = std::shared_ptr<Tensor::Node>;

NodePtr make_node(int rows, int cols, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Tensor::Node>();
    n->rows = rows;
    n->cols = cols;
    n->val.resize(static_cast<std::size_t>(rows) * cols);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

// gradient helper: accumulate src into parent i if it wants gradients
void accum(Tensor::Node& self, std::size_t i, std::span<const double> g) {
    auto& p = *self.parents[i];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t k = 0; k < g.size(); ++k) p.grad[k] += g[k];
}

}  // namespace

Tensor Tensor::constant(int rows, int cols, std::vector<double> v) {
    if (static_cast<std::size_t>(rows) * cols != v.size())
        throw std::invalid_argument("Tensor::constant: value count does not match shape");
    auto n = make_node(rows, cols, {});
    n->val = std::move(v);
    return Tensor(n);
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    auto n = make_node(rows, cols, {});
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::param(int rows, int cols, std::vector<double> v) {
    Tensor t = constant(rows, cols, std::move(v));
    t.node()->requires_grad = true;
    return t;
}

double Tensor::value() const {
    if (rows() != 1 || cols() != 1) throw std::logic_error("Tensor::value: not a scalar");
    return node_->val[0];
}

void Tensor::set_values(std::span<const double> v) const {
    if (v.size() != node_->val.size())
        throw std::invalid_argument("Tensor::set_values: size mismatch");
    std::copy(v.begin(), v.end(), node_->val.begin());
}

// --------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto n = make_node(a.rows(), a.cols(), {a.node(), b.node()});
    for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a.values()[i] + b.values()[i];
    n->backfn = [](Tensor::Node& self) {
        accum(self, 0, self.grad);
        accum(self, 1, self.grad);
    };
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto n = make_node(a.rows(), a.cols(), {a.node(), b.node()});
    for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a.values()[i] - b.values()[i];
    n->backfn = [](Tensor::Node& self) {
        accum(self, 0, self.grad);
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] -= self.grad[k];
        }
    };
    return Tensor(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto n = make_node(a.rows(), a.cols(), {a.node(), b.node()});
    for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a.values()[i] * b.values()[i];
    n->backfn = [](Tensor::Node& self) {
        const auto& av = self.parents[0]->val;
        const auto& bv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k] * bv[k];
        }
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k] * av[k];
        }
    };
    return Tensor(n);
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    auto n = make_node(a.rows(), a.cols(), {a.node(), b.node()});
    for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = a.values()[i] / b.values()[i];
    n->backfn = [](Tensor::Node& self) {
        const auto& av = self.parents[0]->val;
        const auto& bv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k] / bv[k];
        }
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                p.grad[k] -= self.grad[k] * av[k] / (bv[k] * bv[k]);
        }
    };
    return Tensor(n);
}

Tensor max_elem(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_elem");
    auto n = make_node(a.rows(), a.cols(), {a.node(), b.node()});
    for (std::size_t i = 0; i < n->size(); ++i)
        n->val[i] = std::max(a.values()[i], b.values()[i]);
    n->backfn = [](Tensor::Node& self) {
        const auto& av = self.parents[0]->val;
        const auto& bv = self.parents[1]->val;
        // ties route to the first argument
        for (int side = 0; side < 2; ++side) {
            if (!self.parents[static_cast<std::size_t>(side)]->requires_grad) continue;
            auto& p = *self.parents[static_cast<std::size_t>(side)];
            p.ensure_grad();
            for (std::size_t k = 0; k < self.grad.size(); ++k) {
                const bool first = av[k] >= bv[k];
                if ((side == 0) == first) p.grad[k] += self.grad[k];
            }
        }
    };
    return Tensor(n);
}

// ----------------------------------------------------------------- broadcast

Tensor add_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("add_rowvec: row must be 1x" + std::to_string(a.cols()));
    auto n = make_node(a.rows(), a.cols(), {a.node(), row.node()});
    const int C = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < C; ++c)
            n->val[static_cast<std::size_t>(r) * C + c] = a.at(r, c) + row.values()[static_cast<std::size_t>(c)];
    n->backfn = [](Tensor::Node& self) {
        accum(self, 0, self.grad);
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            const int C = self.cols;
            for (int r = 0; r < self.rows; ++r)
                for (int c = 0; c < C; ++c)
                    p.grad[static_cast<std::size_t>(c)] += self.grad[static_cast<std::size_t>(r) * C + c];
        }
    };
    return Tensor(n);
}

Tensor mul_rowvec(const Tensor& a, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("mul_rowvec: row must be 1x" + std::to_string(a.cols()));
    auto n = make_node(a.rows(), a.cols(), {a.node(), row.node()});
    const int C = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < C; ++c)
            n->val[static_cast<std::size_t>(r) * C + c] = a.at(r, c) * row.values()[static_cast<std::size_t>(c)];
    n->backfn = [](Tensor::Node& self) {
        const int C = self.cols;
        const auto& av = self.parents[0]->val;
        const auto& rv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (int r = 0; r < self.rows; ++r)
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * C + c;
                    p.grad[i] += self.grad[i] * rv[static_cast<std::size_t>(c)];
                }
        }
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            for (int r = 0; r < self.rows; ++r)
                for (int c = 0; c < C; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * C + c;
                    p.grad[static_cast<std::size_t>(c)] += self.grad[i] * av[i];
                }
        }
    };
    return Tensor(n);
}

Tensor broadcast_rows(const Tensor& row, int rows) {
    if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: input must be 1xC");
    auto n = make_node(rows, row.cols(), {row.node()});
    const int C = row.cols();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c)
            n->val[static_cast<std::size_t>(r) * C + c] = row.values()[static_cast<std::size_t>(c)];
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        const int C = self.cols;
        for (int r = 0; r < self.rows; ++r)
            for (int c = 0; c < C; ++c)
                p.grad[static_cast<std::size_t>(c)] += self.grad[static_cast<std::size_t>(r) * C + c];
    };
    return Tensor(n);
}

// -------------------------------------------------------------------- linalg

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
    const int R = a.rows(), K = a.cols(), C = b.cols();
    auto n = make_node(R, C, {a.node(), b.node()});
    for (int r = 0; r < R; ++r)
        for (int k = 0; k < K; ++k) {
            const double av = a.at(r, k);
            if (av == 0.0) continue;
            const double* brow = b.values().data() + static_cast<std::size_t>(k) * C;
            double* out = n->val.data() + static_cast<std::size_t>(r) * C;
            for (int c = 0; c < C; ++c) out[c] += av * brow[c];
        }
    n->backfn = [R, K, C](Tensor::Node& self) {
        const auto& av = self.parents[0]->val;
        const auto& bv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            // dA = dOut * B^T
            for (int r = 0; r < R; ++r)
                for (int k = 0; k < K; ++k) {
                    double s = 0.0;
                    const double* g = self.grad.data() + static_cast<std::size_t>(r) * C;
                    const double* brow = bv.data() + static_cast<std::size_t>(k) * C;
                    for (int c = 0; c < C; ++c) s += g[c] * brow[c];
                    p.grad[static_cast<std::size_t>(r) * K + k] += s;
                }
        }
        if (self.parents[1]->requires_grad) {
            auto& p = *self.parents[1];
            p.ensure_grad();
            // dB = A^T * dOut
            for (int k = 0; k < K; ++k)
                for (int r = 0; r < R; ++r) {
                    const double a_rk = av[static_cast<std::size_t>(r) * K + k];
                    if (a_rk == 0.0) continue;
                    const double* g = self.grad.data() + static_cast<std::size_t>(r) * C;
                    double* out = p.grad.data() + static_cast<std::size_t>(k) * C;
                    for (int c = 0; c < C; ++c) out[c] += a_rk * g[c];
                }
        }
    };
    return Tensor(n);
}

Tensor transpose(const Tensor& a) {
    auto n = make_node(a.cols(), a.rows(), {a.node()});
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c)
            n->val[static_cast<std::size_t>(c) * a.rows() + r] = a.at(r, c);
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int r = 0; r < self.rows; ++r)
            for (int c = 0; c < self.cols; ++c)
                p.grad[static_cast<std::size_t>(c) * self.rows + r] +=
                    self.grad[static_cast<std::size_t>(r) * self.cols + c];
    };
    return Tensor(n);
}

// ------------------------------------------------------------------- unary

namespace {

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
    auto n = make_node(a.rows(), a.cols(), {a.node()});
    for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = f(a.values()[i]);
    n->backfn = [df](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t k = 0; k < self.grad.size(); ++k)
            p.grad[k] += self.grad[k] * df(p.val[k], self.val[k]);
    };
    return Tensor(n);
}

}  // namespace

Tensor scale(const Tensor& a, double k) {
    return unary_op(a, [k](double x) { return x * k; }, [k](double, double) { return k; });
}

Tensor add_scalar(const Tensor& a, double k) {
    return unary_op(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor tanh_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt_(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(
        a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& a) {
    auto n = make_node(1, 1, {a.node()});
    double s = 0.0;
    for (double v : a.values()) s += v;
    n->val[0] = s;
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (auto& g : p.grad) g += self.grad[0];
    };
    return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.values().size()));
}

Tensor sum_rows(const Tensor& a) {
    auto n = make_node(1, a.cols(), {a.node()});
    const int C = a.cols();
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < C; ++c) n->val[static_cast<std::size_t>(c)] += a.at(r, c);
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        const int C = self.cols;
        for (int r = 0; r < p.rows; ++r)
            for (int c = 0; c < C; ++c)
                p.grad[static_cast<std::size_t>(r) * C + c] += self.grad[static_cast<std::size_t>(c)];
    };
    return Tensor(n);
}

Tensor mean_rows(const Tensor& a) { return scale(sum_rows(a), 1.0 / a.rows()); }

Tensor max_rows(const Tensor& a) {
    auto n = make_node(1, a.cols(), {a.node()});
    const int C = a.cols();
    for (int c = 0; c < C; ++c) {
        double best = a.at(0, c);
        for (int r = 1; r < a.rows(); ++r) best = std::max(best, a.at(r, c));
        n->val[static_cast<std::size_t>(c)] = best;
    }
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        const int C = self.cols;
        for (int c = 0; c < C; ++c) {
            // gradient flows to the first row attaining the max
            for (int r = 0; r < p.rows; ++r) {
                if (p.val[static_cast<std::size_t>(r) * C + c] == self.val[static_cast<std::size_t>(c)]) {
                    p.grad[static_cast<std::size_t>(r) * C + c] += self.grad[static_cast<std::size_t>(c)];
                    break;
                }
            }
        }
    };
    return Tensor(n);
}

Tensor softmax_rows(const Tensor& a) {
    auto n = make_node(a.rows(), a.cols(), {a.node()});
    const int C = a.cols();
    for (int r = 0; r < a.rows(); ++r) {
        double mx = a.at(r, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, a.at(r, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(a.at(r, c) - mx);
            n->val[static_cast<std::size_t>(r) * C + c] = e;
            z += e;
        }
        for (int c = 0; c < C; ++c) n->val[static_cast<std::size_t>(r) * C + c] /= z;
    }
    n->backfn = [](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        const int C = self.cols;
        for (int r = 0; r < self.rows; ++r) {
            const double* s = self.val.data() + static_cast<std::size_t>(r) * C;
            const double* g = self.grad.data() + static_cast<std::size_t>(r) * C;
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += s[c] * g[c];
            double* out = p.grad.data() + static_cast<std::size_t>(r) * C;
            for (int c = 0; c < C; ++c) out[c] += s[c] * (g[c] - dot);
        }
    };
    return Tensor(n);
}

// ------------------------------------------------------------ shape plumbing

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty list");
    const int C = parts[0].cols();
    int R = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        if (p.cols() != C) throw std::invalid_argument("concat_rows: column mismatch");
        R += p.rows();
        parents.push_back(p.node());
    }
    auto n = make_node(R, C, std::move(parents));
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.values().begin(), p.values().end(), n->val.begin() + static_cast<std::ptrdiff_t>(off));
        off += p.values().size();
    }
    n->backfn = [](Tensor::Node& self) {
        std::size_t off = 0;
        for (auto& par : self.parents) {
            if (par->requires_grad) {
                par->ensure_grad();
                for (std::size_t k = 0; k < par->val.size(); ++k)
                    par->grad[k] += self.grad[off + k];
            }
            off += par->val.size();
        }
    };
    return Tensor(n);
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
    const int R = parts[0].rows();
    int C = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        if (p.rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
        C += p.cols();
        parents.push_back(p.node());
    }
    auto n = make_node(R, C, std::move(parents));
    int col0 = 0;
    for (const auto& p : parts) {
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < p.cols(); ++c)
                n->val[static_cast<std::size_t>(r) * C + col0 + c] = p.at(r, c);
        col0 += p.cols();
    }
    n->backfn = [R, C](Tensor::Node& self) {
        int col0 = 0;
        for (auto& par : self.parents) {
            const int pc = par->cols;
            if (par->requires_grad) {
                par->ensure_grad();
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < pc; ++c)
                        par->grad[static_cast<std::size_t>(r) * pc + c] +=
                            self.grad[static_cast<std::size_t>(r) * C + col0 + c];
            }
            col0 += pc;
        }
    };
    return Tensor(n);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    auto n = make_node(a.rows(), c1 - c0, {a.node()});
    const int C = c1 - c0;
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < C; ++c)
            n->val[static_cast<std::size_t>(r) * C + c] = a.at(r, c0 + c);
    n->backfn = [c0](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int r = 0; r < self.rows; ++r)
            for (int c = 0; c < self.cols; ++c)
                p.grad[static_cast<std::size_t>(r) * p.cols + c0 + c] +=
                    self.grad[static_cast<std::size_t>(r) * self.cols + c];
    };
    return Tensor(n);
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    auto n = make_node(r1 - r0, a.cols(), {a.node()});
    const int C = a.cols();
    for (int r = 0; r < r1 - r0; ++r)
        for (int c = 0; c < C; ++c)
            n->val[static_cast<std::size_t>(r) * C + c] = a.at(r0 + r, c);
    n->backfn = [r0](Tensor::Node& self) {
        if (!self.parents[0]->requires_grad) return;
        auto& p = *self.parents[0];
        p.ensure_grad();
        const int C = self.cols;
        for (int r = 0; r < self.rows; ++r)
            for (int c = 0; c < C; ++c)
                p.grad[static_cast<std::size_t>(r0 + r) * C + c] +=
                    self.grad[static_cast<std::size_t>(r) * C + c];
    };
    return Tensor(n);
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    if (rows * cols != a.rows() * a.cols())
        throw std::invalid_argument("reshape: element count mismatch");
    auto n = make_node(rows, cols, {a.node()});
    n->val = a.values();
    n->backfn = [](Tensor::Node& self) { accum(self, 0, self.grad); };
    return Tensor(n);
}

// ------------------------------------------------------------------ backward

void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw std::logic_error("backward: loss must be a scalar");
    auto root = loss.node();
    if (root->back_ran)
        throw std::logic_error("backward: called twice on the same graph without reset");

    // iterative post-order DFS; back_ran doubles as the visited marker
    std::vector<Tensor::Node*> order;
    std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    root->back_ran = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor::Node* p = node->parents[next].get();
            ++next;
            if (!p->back_ran && p->requires_grad) {
                p->back_ran = true;
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* node = *it;
        if (node->backfn && !node->grad.empty()) node->backfn(*node);
    }
}

// ----------------------------------------------------------------------- mlp

Act act_from_string(const std::string& s) {
    if (s == "relu") return Act::Relu;
    if (s == "tanh") return Act::Tanh;
    if (s == "identity") return Act::Identity;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Act a) {
    switch (a) {
        case Act::Relu: return "relu";
        case Act::Tanh: return "tanh";
        case Act::Identity: return "identity";
    }
    return "?";
}

Mlp::Mlp(int in_dim, int out_dim, const MlpConfig& cfg, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim) {
    if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("Mlp: dims must be positive");
    std::vector<int> dims{in_dim};
    for (int i = 0; i < cfg.hidden_depth; ++i) dims.push_back(cfg.hidden_width);
    dims.push_back(out_dim);

    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fi = dims[l], fo = dims[l + 1];
        const bool last = (l + 2 == dims.size());
        const double limit = std::sqrt(6.0 / (fi + fo)) * (last ? cfg.output_init_scale : 1.0);
        std::vector<double> w(static_cast<std::size_t>(fi) * fo);
        for (auto& v : w) v = rng.uniform(-limit, limit);
        Layer layer;
        layer.W = Tensor::param(fi, fo, std::move(w));
        layer.b = Tensor::param(1, fo, std::vector<double>(static_cast<std::size_t>(fo), 0.0));
        layer.act = last ? Act::Identity : cfg.hidden_act;
        layers_.push_back(std::move(layer));
    }
}

Tensor Mlp::forward(const Tensor& input) const {
    if (input.cols() != in_dim_)
        throw std::invalid_argument("Mlp::forward: input width " + std::to_string(input.cols()) +
                                    " != " + std::to_string(in_dim_));
    Tensor h = input;
    for (const auto& layer : layers_) {
        h = add_rowvec(matmul(h, layer.W), layer.b);
        switch (layer.act) {
            case Act::Relu: h = relu(h); break;
            case Act::Tanh: h = tanh_(h); break;
            case Act::Identity: break;
        }
    }
    return h;
}

std::vector<Tensor> Mlp::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        out.push_back(l.W);
        out.push_back(l.b);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Mlp::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        out.emplace_back(std::to_string(i) + ".W", layers_[i].W);
        out.emplace_back(std::to_string(i) + ".b", layers_[i].b);
    }
    return out;
}

void sgd_step(std::span<const Tensor> params, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    // validate every gradient before touching any parameter
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        for (std::size_t k = 0; k < g.size(); ++k)
            if (!std::isfinite(g[k]))
                throw SgdError("sgd_step: non-finite gradient at parameter " + std::to_string(i) +
                               " element " + std::to_string(k) + " (" + format_double(g[k]) + ")");
    }
    for (const auto& p : params) {
        auto& node = *p.node();
        if (node.grad.empty()) continue;  // unreached parameter, gradient is zero
        for (std::size_t k = 0; k < node.val.size(); ++k) node.val[k] -= lr * node.grad[k];
    }
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'Q', 'U', 'O', 'S', 'R', 'C', 'K', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    const std::uint32_t len = read_u32(is);
    if (len > (1u << 28)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        write_str(os, name);
        write_u32(os, static_cast<std::uint32_t>(t.rows()));
        write_u32(os, static_cast<std::uint32_t>(t.cols()));
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.values().size() * sizeof(double)));
    }
    write_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        write_str(os, k);
        write_str(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failure on '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: unknown format/version in '" + path + "'");
    Checkpoint ck;
    const std::uint32_t nt = read_u32(is);
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = read_str(is);
        const int rows = static_cast<int>(read_u32(is));
        const int cols = static_cast<int>(read_u32(is));
        std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
        ck.tensors.emplace_back(std::move(name), Tensor::constant(rows, cols, std::move(vals)));
    }
    const std::uint32_t nm = read_u32(is);
    for (std::uint32_t i = 0; i < nm; ++i) {
        std::string k = read_str(is);
        ck.meta[k] = read_str(is);
    }
    return ck;
}

}  // namespace quosr::ad
