#include "mira/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mira {

Tensor Tensor::full(int rows, int cols, double v) {
    Tensor t(rows, cols);
    t.fill(v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t(1, 1);
    t[0] = v;
    return t;
}

Tensor Tensor::row(const std::vector<double>& v) {
    check_shape(!v.empty(), "row vector must be non-empty");
    Tensor t(1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

Tensor Tensor::column(const std::vector<double>& v) {
    check_shape(!v.empty(), "column vector must be non-empty");
    Tensor t(static_cast<int>(v.size()), 1);
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

Tensor Tensor::from(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    check_shape(r > 0, "from() requires at least one row");
    const int c = static_cast<int>(rows.begin()->size());
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
        check_shape(static_cast<int>(row.size()) == c, "ragged initializer");
        int j = 0;
        for (double v : row) t.at(i, j++) = v;
        ++i;
    }
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::add_in_place(const Tensor& o) {
    check_shape(same_shape(o), "add_in_place shape mismatch");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
}

void Tensor::scale_in_place(double c) {
    for (double& v : data_) v *= c;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

std::uint64_t Tensor::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    mix(&rows_, sizeof(rows_));
    mix(&cols_, sizeof(cols_));
    if (!data_.empty()) mix(data_.data(), data_.size() * sizeof(double));
    return h;
}

}  // namespace mira
