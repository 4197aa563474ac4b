#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rlsum/errors.hpp"

namespace rlsum {

// Dense row-major matrix of 64-bit reals. A 1xN matrix doubles as a row
// vector throughout the library.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    bool empty() const { return rows == 0 || cols == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_row(const std::vector<double>& v) {
        Matrix m(1, v.size());
        m.data = v;
        return m;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw DimensionError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                             " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    Matrix out(a.rows, b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
    return out;
}

inline void add_inplace(Matrix& dst, const Matrix& src) {
    if (!dst.same_shape(src)) throw DimensionError("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

inline void scale_inplace(Matrix& m, double s) {
    for (double& v : m.data) v *= s;
}

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

// Rows of `src` selected by `indices`, in the given order.
inline Matrix gather_rows(const Matrix& src, const std::vector<std::uint32_t>& indices) {
    Matrix out(indices.size(), src.cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.rows)
            throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                                 " out of range for " + std::to_string(src.rows) + " rows");
        const double* s = src.row(indices[i]);
        std::copy(s, s + src.cols, out.row(i));
    }
    return out;
}

}  // namespace rlsum
