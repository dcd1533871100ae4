#include "refl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace refl {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw NumericError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix();
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols()) throw NumericError("ragged rows in Matrix::from_rows");
        std::copy(rows[i].begin(), rows[i].end(), m.row(i));
    }
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {
void check_inner(const Matrix& a, const Matrix& b, std::size_t a_inner, std::size_t b_inner,
                 const char* op) {
    if (a_inner != b_inner) {
        throw NumericError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                           b.shape_str());
    }
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.cols(), "matmul_bt");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.rows(), b.rows(), "matmul_at");
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw NumericError("add: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix add_row_broadcast(const Matrix& m, const Matrix& rowv) {
    if (rowv.rows() != 1 || rowv.cols() != m.cols()) {
        throw NumericError("add_row_broadcast: incompatible shapes " + m.shape_str() + " and " +
                           rowv.shape_str());
    }
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* orow = out.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) orow[j] += rowv(0, j);
    }
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& v : out.data()) v *= s;
    return out;
}

Matrix hconcat(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw NumericError("hconcat: row mismatch " + a.shape_str() + " and " + b.shape_str());
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy(a.row(i), a.row(i) + a.cols(), out.row(i));
        std::copy(b.row(i), b.row(i) + b.cols(), out.row(i) + a.cols());
    }
    return out;
}

Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Matrix relu_backward(const Matrix& pre, const Matrix& upstream) {
    Matrix out = upstream;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (pre.data()[i] <= 0.0) out.data()[i] = 0.0;
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* in = m.row(i);
        double* o = out.row(i);
        double mx = in[0];
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) o[j] /= sum;
    }
    return out;
}

CrossEntropyResult cross_entropy_mean(const Matrix& logits, const std::vector<int>& labels) {
    if (labels.size() != logits.rows()) {
        throw NumericError("cross_entropy_mean: " + std::to_string(labels.size()) +
                           " labels for logits " + logits.shape_str());
    }
    const std::size_t n = logits.rows();
    const std::size_t c = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw NumericError("cross_entropy_mean: label " + std::to_string(labels[i]) +
                               " at index " + std::to_string(i) + " outside [0, " +
                               std::to_string(c) + ")");
        }
    }
    CrossEntropyResult res;
    res.grad_logits = softmax_rows(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = res.grad_logits(i, static_cast<std::size_t>(labels[i]));
        loss -= std::log(std::max(p, 1e-300));
    }
    res.loss = loss / static_cast<double>(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double* g = res.grad_logits.row(i);
        for (std::size_t j = 0; j < c; ++j) g[j] *= inv_n;
        g[labels[i]] -= inv_n;
    }
    return res;
}

Matrix& ParamStore::add(const std::string& name, Matrix value) {
    if (has(name)) throw NumericError("duplicate parameter name: " + name);
    Entry e;
    e.grad = Matrix(value.rows(), value.cols());
    e.velocity = Matrix(value.rows(), value.cols());
    e.value = std::move(value);
    return entries_.emplace(name, std::move(e)).first->second.value;
}

Matrix& ParamStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NumericError("unknown parameter: " + name);
    return it->second.value;
}

const Matrix& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NumericError("unknown parameter: " + name);
    return it->second.value;
}

Matrix& ParamStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NumericError("unknown parameter: " + name);
    return it->second.grad;
}

void ParamStore::zero_grads() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

void sgd_step(ParamStore& params, const SgdConfig& cfg) {
    if (cfg.learning_rate <= 0.0) throw ConfigError("sgd_step: learning_rate must be positive");
    for (auto& [name, e] : params.entries()) {
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            double g = e.grad.data()[i] + cfg.weight_decay * e.value.data()[i];
            double v = cfg.momentum * e.velocity.data()[i] + g;
            e.velocity.data()[i] = v;
            e.value.data()[i] -= cfg.learning_rate * v;
        }
        e.grad.fill(0.0);
    }
}

double finite_diff_check(const std::function<double(const ParamStore&)>& f, ParamStore& params,
                         const std::map<std::string, Matrix>& analytic, double eps) {
    if (eps <= 0.0) throw NumericError("finite_diff_check: eps must be positive");
    double max_rel = 0.0;
    for (auto& [name, e] : params.entries()) {
        auto ait = analytic.find(name);
        if (ait == analytic.end()) throw NumericError("finite_diff_check: no analytic grad for " + name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double orig = e.value.data()[i];
            e.value.data()[i] = orig + eps;
            const double fp = f(params);
            e.value.data()[i] = orig - eps;
            const double fm = f(params);
            e.value.data()[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("finite_diff_check: non-finite objective at " + name);
            }
            const double numeric = (fp - fm) / (2.0 * eps);
            const double rel =
                std::abs(ait->second.data()[i] - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace refl
