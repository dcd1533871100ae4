#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "refl/error.hpp"

namespace refl {

// Dense row-major f64 matrix. The only tensor type in the project; vectors are
// 1-column or 1-row matrices.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    bool all_finite() const;
    std::string shape_str() const;

    bool operator==(const Matrix& o) const = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose.
Matrix matmul_at(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
// Adds a 1xC row vector to every row of m.
Matrix add_row_broadcast(const Matrix& m, const Matrix& row);
Matrix scale(const Matrix& m, double s);
// Horizontal concatenation [a | b].
Matrix hconcat(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& m);
// grad of relu: upstream masked by pre-activation sign.
Matrix relu_backward(const Matrix& pre, const Matrix& upstream);

// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

struct CrossEntropyResult {
    double loss = 0.0;
    Matrix grad_logits;  // (softmax - onehot) / N
};

// Mean cross-entropy over rows; labels are class indices.
CrossEntropyResult cross_entropy_mean(const Matrix& logits, const std::vector<int>& labels);

// Parameter store: named matrices with matching gradient and momentum slots.
// Iteration order is name order, which fixes checkpoint layout.
class ParamStore {
  public:
    struct Entry {
        Matrix value;
        Matrix grad;
        Matrix velocity;
    };

    Matrix& add(const std::string& name, Matrix value);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Matrix& value(const std::string& name);
    const Matrix& value(const std::string& name) const;
    Matrix& grad(const std::string& name);

    std::size_t count() const { return entries_.size(); }
    void zero_grads();

    // Ordered (by name) traversal.
    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

  private:
    std::map<std::string, Entry> entries_;
};

struct SgdConfig {
    double learning_rate = 1e-2;
    double weight_decay = 0.0;
    double momentum = 0.0;
};

// v <- momentum*v + (g + wd*w); w <- w - lr*v; grads zeroed afterwards.
void sgd_step(ParamStore& params, const SgdConfig& cfg);

// Central-difference gradient check. Returns max over entries of
// |analytic - numeric| / max(1, |numeric|). `analytic` maps parameter name to
// its gradient matrix (same shapes as params).
double finite_diff_check(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                         const std::map<std::string, Matrix>& analytic, double eps);

}  // namespace refl
