#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "musechat/errors.hpp"
#include "musechat/rng.hpp"

namespace musechat {

/// Dense row-major matrix of 64-bit floats. All model state and every
/// intermediate activation uses this type; gradient checks at 1e-4 relative
/// tolerance rule out 32-bit floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw DimensionError("ragged initializer");
            for (double v : row) data.push_back(v);
        }
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return rows * cols; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

    void fill(double v) {
        for (double& x : data) x = v;
    }

    bool finite() const {
        for (double x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

    static Matrix full(std::size_t r, std::size_t c, double v) {
        Matrix m(r, c);
        m.fill(v);
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix randn(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
        Matrix m(r, c);
        for (double& x : m.data) x = scale * rng.normal();
        return m;
    }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double dot_flat(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("dot_flat: " + a.shape_str() + " vs " + b.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double l2_norm(const Matrix& a) { return std::sqrt(dot_flat(a, a)); }

inline double cosine_similarity(const Matrix& a, const Matrix& b) {
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return -1.0;  // zero-norm sorts last in rankings
    return dot_flat(a, b) / (na * nb);
}

}  // namespace musechat
