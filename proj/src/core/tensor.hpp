#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"

namespace digpt {

template <class T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major 2D tensor. Vectors are stored as 1 x cols.
template <class T>
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

    size_t size() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    T* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(static_cast<size_t>(r) * c, T(0));
    }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    Eigen::Map<MatrixRM<T>> map() { return {v.data(), rows, cols}; }
    Eigen::Map<const MatrixRM<T>> map() const { return {v.data(), rows, cols}; }

    bool all_finite() const {
        for (const T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(rows, cols);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <class T>
inline uint64_t checksum(const Tensor<T>& t) {
    return fnv1a64(t.v.data(), t.v.size() * sizeof(T));
}

template <class T>
inline double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    if (a.rows != b.rows || a.cols != b.cols) return std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
    return m;
}

}  // namespace digpt
