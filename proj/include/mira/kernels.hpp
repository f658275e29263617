#pragma once

#include <vector>

#include "mira/tensor.hpp"

namespace mira::kernels {

// Forward kernels shared by the recording tape and the gradient-free
// evaluator. Both execution paths call these exact functions, which is what
// makes recorded and non-recorded forwards bitwise identical.

Tensor matmul(const Tensor& a, const Tensor& b);     // A * B
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // A * B^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // A^T * B

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& a);

// Row-wise layer normalization, one (gamma, beta) pair shared by all rows.
struct LayerNormCache {
    Tensor normalized;       // x_hat, same shape as input
    std::vector<double> inv_std;  // per row
};
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       LayerNormCache* cache);

// Mean over the batch of -log softmax(logits)[label]. Returns 1x1 loss and
// fills `probs` (softmax rows) when non-null.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs);

Tensor sum_all(const Tensor& a);                      // 1x1
Tensor div_by_scalar(const Tensor& a, const Tensor& s);  // s is 1x1

Tensor slice_rows(const Tensor& a, int r0, int r1);   // rows [r0, r1)
Tensor slice_cols(const Tensor& a, int c0, int c1);   // cols [c0, c1)
Tensor reshape(const Tensor& a, int rows, int cols);
Tensor concat_rows(const std::vector<const Tensor*>& parts);
Tensor concat_cols(const std::vector<const Tensor*>& parts);
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);  // a[r][c] + row[0][c]

}  // namespace mira::kernels
