#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace wcmi {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Rows are samples, columns coordinates.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m;
        m.rows_ = rows.size();
        m.cols_ = rows.size() ? rows.begin()->size() : 0;
        m.data_.reserve(m.rows_ * m.cols_);
        for (const auto& r : rows) {
            if (r.size() != m.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
            m.data_.insert(m.data_.end(), r.begin(), r.end());
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    Vec row_copy(std::size_t i) const { return Vec(row(i), row(i) + cols_); }
    void set_row(std::size_t i, const Vec& v) {
        if (v.size() != cols_) throw std::invalid_argument("Matrix::set_row: size mismatch");
        std::copy(v.begin(), v.end(), row(i));
    }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    Vec data_;
};

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double l1_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += std::fabs(x);
    return s;
}

inline double l2_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double linf_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s = std::max(s, std::fabs(x));
    return s;
}

/// Dot product of row r of `m` with `v`.
inline double dot_row(const Matrix& m, std::size_t r, const Vec& v) {
    if (m.cols() != v.size()) throw std::invalid_argument("dot_row: dimension mismatch");
    const double* row = m.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += row[j] * v[j];
    return s;
}

/// Gathers the listed rows of `m` into a new matrix, in index order.
inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(m.row(idx[i]), m.row(idx[i]) + m.cols(), out.row(i));
    return out;
}

/// Column-wise concatenation [a | b]; rows must match.
inline Matrix hcat(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("hcat: row count mismatch");
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy(a.row(i), a.row(i) + a.cols(), out.row(i));
        std::copy(b.row(i), b.row(i) + b.cols(), out.row(i) + a.cols());
    }
    return out;
}

/// A batch of input rows with optional integer labels (one per row).
struct SampleBatch {
    Matrix rows;
    std::vector<int> labels;

    SampleBatch() = default;
    explicit SampleBatch(Matrix r) : rows(std::move(r)) {}
    SampleBatch(Matrix r, std::vector<int> y) : rows(std::move(r)), labels(std::move(y)) {
        if (!labels.empty() && labels.size() != rows.rows())
            throw std::invalid_argument("SampleBatch: label count must match row count");
    }

    std::size_t size() const { return rows.rows(); }
    std::size_t dim() const { return rows.cols(); }
    bool has_labels() const { return !labels.empty(); }

    SampleBatch subset(const std::vector<std::size_t>& idx) const {
        SampleBatch out(gather_rows(rows, idx));
        if (has_labels()) {
            out.labels.reserve(idx.size());
            for (std::size_t i : idx) out.labels.push_back(labels.at(i));
        }
        return out;
    }
};

}  // namespace wcmi
