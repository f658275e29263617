#include "mira/kernels.hpp"

#include <cmath>

namespace mira::kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_shape(a.cols() == b.rows(), "matmul inner dimensions disagree");
    Tensor c(a.rows(), b.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_shape(a.cols() == b.cols(), "matmul_nt inner dimensions disagree");
    Tensor c(a.rows(), b.rows());
    const int m = a.rows(), k = a.cols(), n = b.rows();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
            c.at(i, j) = acc;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    check_shape(a.rows() == b.rows(), "matmul_tn inner dimensions disagree");
    Tensor c(a.cols(), b.cols());
    const int m = a.cols(), k = a.rows(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a.at(p, i) * b.at(p, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_shape(a.same_shape(b), "add shape mismatch");
    Tensor c(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_shape(a.same_shape(b), "sub shape mismatch");
    Tensor c(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return out;
}

Tensor tanh(const Tensor& a) {
    Tensor out(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    Tensor out(a.rows(), a.cols());
    for (int r = 0; r < a.rows(); ++r) {
        double m = a.at(r, 0);
        for (int c = 1; c < a.cols(); ++c) m = std::max(m, a.at(r, c));
        double sum = 0.0;
        for (int c = 0; c < a.cols(); ++c) {
            const double e = std::exp(a.at(r, c) - m);
            out.at(r, c) = e;
            sum += e;
        }
        for (int c = 0; c < a.cols(); ++c) out.at(r, c) /= sum;
    }
    return out;
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       LayerNormCache* cache) {
    check_shape(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm gamma must be 1 x cols");
    check_shape(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm beta must be 1 x cols");
    Tensor out(x.rows(), x.cols());
    if (cache) {
        cache->normalized = Tensor(x.rows(), x.cols());
        cache->inv_std.assign(x.rows(), 0.0);
    }
    const int n = x.cols();
    for (int r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (int c = 0; c < n; ++c) mean += x.at(r, c);
        mean /= n;
        double var = 0.0;
        for (int c = 0; c < n; ++c) {
            const double d = x.at(r, c) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < n; ++c) {
            const double xh = (x.at(r, c) - mean) * inv;
            out.at(r, c) = xh * gamma.at(0, c) + beta.at(0, c);
            if (cache) cache->normalized.at(r, c) = xh;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs) {
    check_shape(static_cast<int>(labels.size()) == logits.rows(),
                "cross_entropy needs one label per logits row");
    const int batch = logits.rows(), classes = logits.cols();
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw contract_error("cross_entropy label out of range");
    }
    if (probs) *probs = Tensor(batch, classes);
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        double m = logits.at(b, 0);
        for (int c = 1; c < classes; ++c) m = std::max(m, logits.at(b, c));
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) sum += std::exp(logits.at(b, c) - m);
        const double lse = m + std::log(sum);
        total += lse - logits.at(b, labels[b]);
        if (probs) {
            for (int c = 0; c < classes; ++c) probs->at(b, c) = std::exp(logits.at(b, c) - lse);
        }
    }
    return Tensor::scalar(total / batch);
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i];
    return Tensor::scalar(s);
}

Tensor div_by_scalar(const Tensor& a, const Tensor& s) {
    check_shape(s.rows() == 1 && s.cols() == 1, "div_by_scalar divisor must be 1x1");
    const double d = s[0];
    Tensor out(a.rows(), a.cols());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] / d;
    return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    check_shape(0 <= r0 && r0 < r1 && r1 <= a.rows(), "slice_rows range out of bounds");
    Tensor out(r1 - r0, a.cols());
    for (int r = r0; r < r1; ++r)
        for (int c = 0; c < a.cols(); ++c) out.at(r - r0, c) = a.at(r, c);
    return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    check_shape(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols range out of bounds");
    Tensor out(a.rows(), c1 - c0);
    for (int r = 0; r < a.rows(); ++r)
        for (int c = c0; c < c1; ++c) out.at(r, c - c0) = a.at(r, c);
    return out;
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    check_shape(static_cast<std::int64_t>(rows) * cols == a.size(), "reshape must preserve size");
    Tensor out(rows, cols);
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i];
    return out;
}

Tensor concat_rows(const std::vector<const Tensor*>& parts) {
    check_shape(!parts.empty(), "concat_rows needs at least one part");
    const int cols = parts[0]->cols();
    int rows = 0;
    for (const Tensor* p : parts) {
        check_shape(p->cols() == cols, "concat_rows column mismatch");
        rows += p->rows();
    }
    Tensor out(rows, cols);
    int r0 = 0;
    for (const Tensor* p : parts) {
        for (int r = 0; r < p->rows(); ++r)
            for (int c = 0; c < cols; ++c) out.at(r0 + r, c) = p->at(r, c);
        r0 += p->rows();
    }
    return out;
}

Tensor concat_cols(const std::vector<const Tensor*>& parts) {
    check_shape(!parts.empty(), "concat_cols needs at least one part");
    const int rows = parts[0]->rows();
    int cols = 0;
    for (const Tensor* p : parts) {
        check_shape(p->rows() == rows, "concat_cols row mismatch");
        cols += p->cols();
    }
    Tensor out(rows, cols);
    int c0 = 0;
    for (const Tensor* p : parts) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < p->cols(); ++c) out.at(r, c0 + c) = p->at(r, c);
        c0 += p->cols();
    }
    return out;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
    check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row_broadcast needs a 1 x cols row");
    Tensor out(a.rows(), a.cols());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) out.at(r, c) = a.at(r, c) + row.at(0, c);
    return out;
}

}  // namespace mira::kernels
