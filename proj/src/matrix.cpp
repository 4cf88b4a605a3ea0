#include "rsb/matrix.hpp"

#include <cmath>

#include "rsb/kernels.hpp"

namespace rsb {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols_) {
            throw DimensionError("ragged row " + std::to_string(r) + ": expected " +
                                 std::to_string(m.cols_) + " values, got " +
                                 std::to_string(rows[r].size()));
        }
        for (std::size_t c = 0; c < m.cols_; ++c) {
            m.at(r, c) = rows[r][c];
        }
    }
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    Matrix m(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) {
        m.at(i, 0) = values[i];
    }
    return m;
}

std::string Matrix::shape_str() const {
    return "(" + std::to_string(rows_) + " x " + std::to_string(cols_) + ")";
}

void Matrix::fill(double value) {
    for (auto& x : data_) {
        x = value;
    }
}

bool Matrix::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

Matrix Matrix::slice_cols(std::size_t begin, std::size_t end) const {
    if (begin > end || end > cols_) {
        throw DimensionError("column slice [" + std::to_string(begin) + ", " +
                             std::to_string(end) + ") out of range for " + shape_str());
    }
    Matrix out(rows_, end - begin);
    for (std::size_t r = 0; r < rows_; ++r) {
        const double* src = row_ptr(r) + begin;
        double* dst = out.row_ptr(r);
        for (std::size_t c = 0; c < out.cols_; ++c) {
            dst[c] = src[c];
        }
    }
    return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows_) {
            throw ContractError("row index " + std::to_string(idx[i]) +
                                " out of range for " + shape_str());
        }
        const double* src = row_ptr(idx[i]);
        double* dst = out.row_ptr(i);
        for (std::size_t c = 0; c < cols_; ++c) {
            dst[c] = src[c];
        }
    }
    return out;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    if (!same_shape(other)) {
        throw DimensionError("elementwise add: " + shape_str() + " vs " + other.shape_str());
    }
    kernels::active().axpy(1.0, other.data(), data(), size());
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (!same_shape(other)) {
        throw DimensionError("elementwise sub: " + shape_str() + " vs " + other.shape_str());
    }
    kernels::active().axpy(-1.0, other.data(), data(), size());
    return *this;
}

Matrix& Matrix::operator*=(double scalar) {
    for (auto& x : data_) {
        x *= scalar;
    }
    return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() +
                             " x " + b.shape_str());
    }
    Matrix c(a.rows(), b.cols());
    kernels::active().gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols()) {
        throw DimensionError("matmul_acc: " + a.shape_str() + " x " + b.shape_str() +
                             " -> " + c.shape_str());
    }
    kernels::active().gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
        throw DimensionError("matmul_tn_acc: " + a.shape_str() + "^T x " + b.shape_str() +
                             " -> " + c.shape_str());
    }
    kernels::active().gemm_tn(a.data(), b.data(), c.data(), a.cols(), a.rows(), b.cols());
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows()) {
        throw DimensionError("matmul_nt_acc: " + a.shape_str() + " x " + b.shape_str() +
                             "^T -> " + c.shape_str());
    }
    kernels::active().gemm_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
}

Matrix hcat(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("hcat: row counts differ, " + a.shape_str() + " vs " +
                             b.shape_str());
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double* dst = out.row_ptr(r);
        const double* pa = a.row_ptr(r);
        for (std::size_t c = 0; c < a.cols(); ++c) {
            dst[c] = pa[c];
        }
        const double* pb = b.row_ptr(r);
        for (std::size_t c = 0; c < b.cols(); ++c) {
            dst[a.cols() + c] = pb[c];
        }
    }
    return out;
}

void scatter_rows_add(const Matrix& src, std::span<const std::size_t> idx, Matrix& dst) {
    if (src.rows() != idx.size() || src.cols() != dst.cols()) {
        throw DimensionError("scatter_rows_add: " + src.shape_str() + " into " +
                             dst.shape_str() + " via " + std::to_string(idx.size()) +
                             " indices");
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
        kernels::active().axpy(1.0, src.row_ptr(i), dst.row_ptr(idx[i]), src.cols());
    }
}

} // namespace rsb
