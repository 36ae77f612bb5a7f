// Shared test helpers: finite-difference gradient checking and small
// random-matrix generators.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "storm/core/graph.hpp"
#include "storm/core/rng.hpp"

namespace storm::testutil {

using core::Mat;
using core::RngState;
using core::Var;

inline Mat random_mat(RngState& rng, std::size_t r, std::size_t c,
                      double stddev = 1.0) {
    return Mat::gaussian(r, c, rng, stddev);
}

// Relative error between analytic gradients and central finite differences
// of a scalar-valued graph. Returns the worst relative error over every
// entry of every input.
inline double grad_check(
    const std::function<Var(const std::vector<Var>&)>& fn,
    std::vector<Mat> input_values, double h = 1e-6) {
    std::vector<Var> inputs;
    inputs.reserve(input_values.size());
    for (Mat& m : input_values) inputs.push_back(Var::param(m));

    Var loss = fn(inputs);
    core::backward(loss);

    double worst = 0.0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        const Mat analytic = inputs[p].grad().size() ? inputs[p].grad()
                                                     : Mat(inputs[p].rows(),
                                                           inputs[p].cols());
        for (std::size_t i = 0; i < input_values[p].size(); ++i) {
            const double orig = input_values[p].v[i];
            const double step = h * std::max(1.0, std::fabs(orig));

            std::vector<Var> plus, minus;
            for (std::size_t q = 0; q < input_values.size(); ++q) {
                Mat m = input_values[q];
                plus.push_back(Var::constant(m));
                minus.push_back(Var::constant(std::move(m)));
            }
            plus[p].mutable_val().v[i] = orig + step;
            minus[p].mutable_val().v[i] = orig - step;

            double fd;
            {
                core::NoGradGuard ng;
                fd = (fn(plus).scalar() - fn(minus).scalar()) / (2.0 * step);
            }
            const double an = analytic.v[i];
            const double denom = std::max({1e-8, std::fabs(fd), std::fabs(an)});
            worst = std::max(worst, std::fabs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace storm::testutil
