#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "storm/core/rng.hpp"

namespace storm::core {

// Dense row-major double matrix. The only numeric container the engine uses;
// vectors are 1 x n or n x 1.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    Mat(std::size_t r, std::size_t c, double fill)
        : rows(r), cols(c), v(r * c, fill) {}
    Mat(std::size_t r, std::size_t c, std::vector<double> data)
        : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != rows * cols)
            throw std::invalid_argument("Mat: data size does not match shape");
    }

    std::size_t size() const { return rows * cols; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }

    bool same_shape(const Mat& o) const {
        return rows == o.rows && cols == o.cols;
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static Mat gaussian(std::size_t r, std::size_t c, RngState& rng,
                        double stddev = 1.0, double mean = 0.0) {
        Mat m(r, c);
        for (double& x : m.v) x = rng.normal(mean, stddev);
        return m;
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

inline void check_shape(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace storm::core
