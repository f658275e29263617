#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "mira/kernels.hpp"
#include "mira/tensor.hpp"

namespace mira {

// Instrumentation: number of gradient records (backward closures) created on
// any tape in this thread since the last reset. The gradient-free evaluator
// never touches it.
std::uint64_t grad_records_allocated();
void reset_grad_record_counter();

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense tensors. Ops execute eagerly through the
// shared kernels and record a pull-back closure; backward() replays the
// closures in reverse creation order (creation order is topological by
// construction), accumulating gradients additively on fan-out. Leaves bound
// to trainable Parameters flush their gradient into Parameter::grad.
class Tape {
  public:
    using Val = Var;

    Var constant(Tensor v);
    // Registers a parameter leaf; repeated calls with the same parameter
    // return the same node so fan-out accumulates on one buffer.
    Var param(Parameter& p);

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    // Gradient accumulated on a node during the last backward() (zeros if
    // the node received none).
    Tensor grad(Var v) const;

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var relu(Var a);
    Var tanh(Var a);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var matmul_tn(Var a, Var b);
    Var softmax_rows(Var a);
    Var layer_norm_rows(Var x, Var gamma, Var beta, double eps);
    Var cross_entropy(Var logits, const std::vector<int>& labels);
    Var sum_all(Var a);
    Var div_by_scalar(Var a, Var s);
    Var slice_rows(Var a, int r0, int r1);
    Var slice_cols(Var a, int c0, int c1);
    Var reshape(Var a, int rows, int cols);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var add_row_broadcast(Var a, Var row);

    // Backpropagates from a 1x1 root with seed d(root)/d(root) = seed.
    void backward(Var root, double seed = 1.0);

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        std::function<void(Tape&, int)> pull;  // null for leaves/constants
        Tensor grad;
        bool grad_set = false;
    };

    Var record(Tensor value, std::function<void(Tape&, int)> pull);
    void accum_grad(Var v, const Tensor& g);
    void accum_grad_region(Var v, const Tensor& g, int r0, int c0);
    const Tensor& node_grad(int idx) const { return nodes_[idx].grad; }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, Parameter*>> leaves_;
    std::unordered_map<const Parameter*, int> leaf_index_;
};

// Gradient-free twin of the tape: same op surface, immediate evaluation
// through the same kernels, no gradient records. Used for inference.
struct EvalCtx {
    using Val = Tensor;

    Tensor constant(Tensor v) const { return v; }
    Tensor param(const Parameter& p) const { return p.value; }
    const Tensor& value(const Tensor& v) const { return v; }

    Tensor add(const Tensor& a, const Tensor& b) const { return kernels::add(a, b); }
    Tensor sub(const Tensor& a, const Tensor& b) const { return kernels::sub(a, b); }
    Tensor scale(const Tensor& a, double c) const { return kernels::scale(a, c); }
    Tensor relu(const Tensor& a) const { return kernels::relu(a); }
    Tensor tanh(const Tensor& a) const { return kernels::tanh(a); }
    Tensor matmul(const Tensor& a, const Tensor& b) const { return kernels::matmul(a, b); }
    Tensor matmul_nt(const Tensor& a, const Tensor& b) const { return kernels::matmul_nt(a, b); }
    Tensor matmul_tn(const Tensor& a, const Tensor& b) const { return kernels::matmul_tn(a, b); }
    Tensor softmax_rows(const Tensor& a) const { return kernels::softmax_rows(a); }
    Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps) const {
        return kernels::layer_norm_rows(x, gamma, beta, eps, nullptr);
    }
    Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) const {
        return kernels::cross_entropy(logits, labels, nullptr);
    }
    Tensor sum_all(const Tensor& a) const { return kernels::sum_all(a); }
    Tensor div_by_scalar(const Tensor& a, const Tensor& s) const {
        return kernels::div_by_scalar(a, s);
    }
    Tensor slice_rows(const Tensor& a, int r0, int r1) const {
        return kernels::slice_rows(a, r0, r1);
    }
    Tensor slice_cols(const Tensor& a, int c0, int c1) const {
        return kernels::slice_cols(a, c0, c1);
    }
    Tensor reshape(const Tensor& a, int rows, int cols) const {
        return kernels::reshape(a, rows, cols);
    }
    Tensor concat_rows(const std::vector<Tensor>& parts) const {
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(parts.size());
        for (const Tensor& p : parts) ptrs.push_back(&p);
        return kernels::concat_rows(ptrs);
    }
    Tensor concat_cols(const std::vector<Tensor>& parts) const {
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(parts.size());
        for (const Tensor& p : parts) ptrs.push_back(&p);
        return kernels::concat_cols(ptrs);
    }
    Tensor add_row_broadcast(const Tensor& a, const Tensor& row) const {
        return kernels::add_row_broadcast(a, row);
    }
};

}  // namespace mira
