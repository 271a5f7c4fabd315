#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace physgen {

// Dense row-major 2D scalar field. The workhorse value type for images,
// material fields and per-pixel gradients.
class Array2 {
public:
    Array2() = default;
    Array2(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0) throw std::invalid_argument("Array2: non-positive shape");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Array2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    double sum() const {
        // Kahan summation; volume-fraction bookkeeping relies on ~1e-12 accuracy.
        double s = 0.0, c = 0.0;
        for (double v : data_) {
            double y = v - c;
            double t = s + y;
            c = (t - s) - y;
            s = t;
        }
        return s;
    }
    double mean() const { return sum() / static_cast<double>(size()); }
    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    double rms() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s / static_cast<double>(size()));
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Array2& operator+=(const Array2& o) {
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Array2& operator-=(const Array2& o) {
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Array2& operator*=(double a) {
        for (double& v : data_) v *= a;
        return *this;
    }

    friend Array2 operator*(double a, Array2 x) {
        x *= a;
        return x;
    }
    friend Array2 operator+(Array2 a, const Array2& b) {
        a += b;
        return a;
    }
    friend Array2 operator-(Array2 a, const Array2& b) {
        a -= b;
        return a;
    }

private:
    int rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

inline double dot(const Array2& a, const Array2& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// 2x2 average pooling; used to map generated images onto coarser solver meshes.
inline Array2 avg_pool2(const Array2& x) {
    if (x.rows() % 2 || x.cols() % 2) throw std::invalid_argument("avg_pool2: odd shape");
    Array2 y(x.rows() / 2, x.cols() / 2);
    for (int r = 0; r < y.rows(); ++r)
        for (int c = 0; c < y.cols(); ++c)
            y(r, c) = 0.25 * (x(2 * r, 2 * c) + x(2 * r, 2 * c + 1) + x(2 * r + 1, 2 * c) +
                              x(2 * r + 1, 2 * c + 1));
    return y;
}

// Adjoint of avg_pool2: spreads each coarse-cell cotangent evenly over its 2x2 block.
inline Array2 avg_pool2_vjp(const Array2& gy, int rows, int cols) {
    Array2 gx(rows, cols);
    for (int r = 0; r < gy.rows(); ++r)
        for (int c = 0; c < gy.cols(); ++c) {
            double g = 0.25 * gy(r, c);
            gx(2 * r, 2 * c) = g;
            gx(2 * r, 2 * c + 1) = g;
            gx(2 * r + 1, 2 * c) = g;
            gx(2 * r + 1, 2 * c + 1) = g;
        }
    return gx;
}

} // namespace physgen
