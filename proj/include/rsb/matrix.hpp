#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rsb/errors.hpp"

namespace rsb {

/// Dense row-major f64 matrix, the universal value type for features,
/// representations and parameters.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
    /// Single-column matrix from a vector.
    static Matrix column(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
    const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    void fill(double value);
    void set_zero() { fill(0.0); }
    bool all_finite() const;

    /// Columns [begin, end) as a new matrix.
    Matrix slice_cols(std::size_t begin, std::size_t end) const;
    /// Rows given by idx (with repetition allowed) as a new matrix.
    Matrix gather_rows(std::span<const std::size_t> idx) const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scalar);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// C = A * B. Throws DimensionError naming both shapes when inner dims differ.
Matrix matmul(const Matrix& a, const Matrix& b);
/// C += A * B (and the transposed-product forms used by backward passes).
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);  // C += A^T B
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);  // C += A B^T

/// [A | B] column-wise concatenation; rows must match.
Matrix hcat(const Matrix& a, const Matrix& b);

/// dst.row(idx[i]) += src.row(i); inverse of Matrix::gather_rows.
void scatter_rows_add(const Matrix& src, std::span<const std::size_t> idx, Matrix& dst);

} // namespace rsb
