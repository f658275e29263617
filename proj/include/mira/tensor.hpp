#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "mira/error.hpp"

namespace mira {

// Dense row-major matrix of 64-bit reals. Vectors are 1xN rows or Nx1
// columns; scalars are 1x1. Everything the engine moves around fits in two
// dimensions, so the shape is (rows, cols).
class Tensor {
  public:
    Tensor() = default;
    Tensor(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
        check_shape(rows > 0 && cols > 0, "tensor dimensions must be positive");
    }

    static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
    static Tensor full(int rows, int cols, double v);
    static Tensor identity(int n);
    static Tensor scalar(double v);
    static Tensor row(const std::vector<double>& v);
    static Tensor column(const std::vector<double>& v);
    static Tensor from(std::initializer_list<std::initializer_list<double>> rows);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::int64_t size() const { return static_cast<std::int64_t>(rows_) * cols_; }
    bool empty() const { return data_.empty(); }
    std::vector<int> shape() const { return {rows_, cols_}; }

    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    bool all_finite() const;
    double item() const {
        check_shape(rows_ == 1 && cols_ == 1, "item() requires a 1x1 tensor");
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void add_in_place(const Tensor& o);
    void scale_in_place(double c);

    double max_abs() const;
    double frobenius_norm() const;

    // FNV-1a over the raw byte representation; bitwise-identity fingerprint.
    std::uint64_t checksum() const;

    bool operator==(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_; }

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Mutable training parameter: value + explicitly managed gradient buffer.
// Gradients accumulate additively across backward passes; nothing zeroes
// them implicitly.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), trainable(train) {}

    void zero_grad() { grad.fill(0.0); }
    void resize_like_value() { grad = Tensor(value.rows(), value.cols()); }
};

}  // namespace mira
