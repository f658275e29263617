#include "mira/tape.hpp"

#include <cmath>
#include <memory>

namespace mira {

namespace {
thread_local std::uint64_t t_grad_records = 0;
}

std::uint64_t grad_records_allocated() { return t_grad_records; }
void reset_grad_record_counter() { t_grad_records = 0; }

Var Tape::record(Tensor value, std::function<void(Tape&, int)> pull) {
    if (pull) ++t_grad_records;
    nodes_.push_back(Node{std::move(value), std::move(pull), Tensor(), false});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor v) { return record(std::move(v), nullptr); }

Var Tape::param(Parameter& p) {
    auto it = leaf_index_.find(&p);
    if (it != leaf_index_.end()) return Var{it->second};
    Var v = record(Tensor(p.value), nullptr);
    leaf_index_.emplace(&p, v.idx);
    leaves_.emplace_back(v.idx, &p);
    return v;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.idx];
    if (n.grad_set) return n.grad;
    return Tensor(n.value.rows(), n.value.cols());
}

void Tape::accum_grad(Var v, const Tensor& g) {
    Node& n = nodes_[v.idx];
    if (!n.grad_set) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
        n.grad_set = true;
    }
    n.grad.add_in_place(g);
}

void Tape::accum_grad_region(Var v, const Tensor& g, int r0, int c0) {
    Node& n = nodes_[v.idx];
    if (!n.grad_set) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
        n.grad_set = true;
    }
    for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) n.grad.at(r0 + r, c0 + c) += g.at(r, c);
}

Var Tape::add(Var a, Var b) {
    return record(kernels::add(value(a), value(b)), [a, b](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, g);
        t.accum_grad(b, g);
    });
}

Var Tape::sub(Var a, Var b) {
    return record(kernels::sub(value(a), value(b)), [a, b](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, g);
        t.accum_grad(b, kernels::scale(g, -1.0));
    });
}

Var Tape::scale(Var a, double c) {
    return record(kernels::scale(value(a), c), [a, c](Tape& t, int self) {
        t.accum_grad(a, kernels::scale(t.node_grad(self), c));
    });
}

Var Tape::relu(Var a) {
    return record(kernels::relu(value(a)), [a](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& x = t.value(a);
        Tensor dx(x.rows(), x.cols());
        for (std::int64_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
        t.accum_grad(a, dx);
    });
}

Var Tape::tanh(Var a) {
    return record(kernels::tanh(value(a)), [a](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& y = t.value(Var{self});
        Tensor dx(y.rows(), y.cols());
        for (std::int64_t i = 0; i < y.size(); ++i) dx[i] = g[i] * (1.0 - y[i] * y[i]);
        t.accum_grad(a, dx);
    });
}

Var Tape::matmul(Var a, Var b) {
    return record(kernels::matmul(value(a), value(b)), [a, b](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, kernels::matmul_nt(g, t.value(b)));  // dA = g B^T
        t.accum_grad(b, kernels::matmul_tn(t.value(a), g));  // dB = A^T g
    });
}

Var Tape::matmul_nt(Var a, Var b) {
    return record(kernels::matmul_nt(value(a), value(b)), [a, b](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, kernels::matmul(g, t.value(b)));     // dA = g B
        t.accum_grad(b, kernels::matmul_tn(g, t.value(a)));  // dB = g^T A
    });
}

Var Tape::matmul_tn(Var a, Var b) {
    return record(kernels::matmul_tn(value(a), value(b)), [a, b](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, kernels::matmul_nt(t.value(b), g));  // dA = B g^T
        t.accum_grad(b, kernels::matmul(t.value(a), g));     // dB = A g
    });
}

Var Tape::softmax_rows(Var a) {
    return record(kernels::softmax_rows(value(a)), [a](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& y = t.value(Var{self});
        Tensor dx(y.rows(), y.cols());
        for (int r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < y.cols(); ++c) dx.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
        }
        t.accum_grad(a, dx);
    });
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    auto cache = std::make_shared<kernels::LayerNormCache>();
    Tensor out = kernels::layer_norm_rows(value(x), value(gamma), value(beta), eps, cache.get());
    return record(std::move(out), [x, gamma, beta, cache](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& gm = t.value(gamma);
        const Tensor& xh = cache->normalized;
        const int rows = xh.rows(), n = xh.cols();
        Tensor dgamma(1, n), dbeta(1, n), dx(rows, n);
        for (int r = 0; r < rows; ++r) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int c = 0; c < n; ++c) {
                const double gc = g.at(r, c);
                dbeta.at(0, c) += gc;
                dgamma.at(0, c) += gc * xh.at(r, c);
                const double dxh = gc * gm.at(0, c);
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh.at(r, c);
            }
            mean_dxh /= n;
            mean_dxh_xh /= n;
            const double inv = cache->inv_std[r];
            for (int c = 0; c < n; ++c) {
                const double dxh = g.at(r, c) * gm.at(0, c);
                dx.at(r, c) = inv * (dxh - mean_dxh - xh.at(r, c) * mean_dxh_xh);
            }
        }
        t.accum_grad(x, dx);
        t.accum_grad(gamma, dgamma);
        t.accum_grad(beta, dbeta);
    });
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
    auto probs = std::make_shared<Tensor>();
    Tensor loss = kernels::cross_entropy(value(logits), labels, probs.get());
    return record(std::move(loss), [logits, labels, probs](Tape& t, int self) {
        const double g = t.node_grad(self)[0];
        const int batch = probs->rows(), classes = probs->cols();
        Tensor dl(batch, classes);
        const double s = g / batch;
        for (int b = 0; b < batch; ++b) {
            for (int c = 0; c < classes; ++c) {
                dl.at(b, c) = s * (probs->at(b, c) - (labels[b] == c ? 1.0 : 0.0));
            }
        }
        t.accum_grad(logits, dl);
    });
}

Var Tape::sum_all(Var a) {
    return record(kernels::sum_all(value(a)), [a](Tape& t, int self) {
        const double g = t.node_grad(self)[0];
        const Tensor& x = t.value(a);
        t.accum_grad(a, Tensor::full(x.rows(), x.cols(), g));
    });
}

Var Tape::div_by_scalar(Var a, Var s) {
    return record(kernels::div_by_scalar(value(a), value(s)), [a, s](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& y = t.value(Var{self});
        const double sv = t.value(s)[0];
        t.accum_grad(a, kernels::scale(g, 1.0 / sv));
        double acc = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) acc += g[i] * y[i];
        t.accum_grad(s, Tensor::scalar(-acc / sv));
    });
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    return record(kernels::slice_rows(value(a), r0, r1), [a, r0](Tape& t, int self) {
        t.accum_grad_region(a, t.node_grad(self), r0, 0);
    });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    return record(kernels::slice_cols(value(a), c0, c1), [a, c0](Tape& t, int self) {
        t.accum_grad_region(a, t.node_grad(self), 0, c0);
    });
}

Var Tape::reshape(Var a, int rows, int cols) {
    return record(kernels::reshape(value(a), rows, cols), [a](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        const Tensor& x = t.value(a);
        t.accum_grad(a, kernels::reshape(g, x.rows(), x.cols()));
    });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    for (Var p : parts) ptrs.push_back(&value(p));
    return record(kernels::concat_rows(ptrs), [parts](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        int r0 = 0;
        for (Var p : parts) {
            const int pr = t.value(p).rows();
            t.accum_grad(p, kernels::slice_rows(g, r0, r0 + pr));
            r0 += pr;
        }
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    for (Var p : parts) ptrs.push_back(&value(p));
    return record(kernels::concat_cols(ptrs), [parts](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        int c0 = 0;
        for (Var p : parts) {
            const int pc = t.value(p).cols();
            t.accum_grad(p, kernels::slice_cols(g, c0, c0 + pc));
            c0 += pc;
        }
    });
}

Var Tape::add_row_broadcast(Var a, Var row) {
    return record(kernels::add_row_broadcast(value(a), value(row)), [a, row](Tape& t, int self) {
        const Tensor& g = t.node_grad(self);
        t.accum_grad(a, g);
        Tensor dr(1, g.cols());
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < g.cols(); ++c) dr.at(0, c) += g.at(r, c);
        t.accum_grad(row, dr);
    });
}

void Tape::backward(Var root, double seed) {
    check_contract(root.valid() && root.idx < static_cast<int>(nodes_.size()),
                   "backward root is not on this tape");
    check_shape(nodes_[root.idx].value.rows() == 1 && nodes_[root.idx].value.cols() == 1,
                "backward root must be a 1x1 scalar");
    accum_grad(root, Tensor::scalar(seed));
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[i].grad_set && nodes_[i].pull) nodes_[i].pull(*this, i);
    }
    for (auto& [idx, p] : leaves_) {
        if (p->trainable && nodes_[idx].grad_set) {
            if (!p->grad.same_shape(p->value)) p->resize_like_value();
            p->grad.add_in_place(nodes_[idx].grad);
        }
    }
}

}  // namespace mira
