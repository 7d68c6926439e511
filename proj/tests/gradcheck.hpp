#pragma once

// Central finite-difference oracle. Independent of the analytic backward code: it only
// perturbs parameter/input values and re-evaluates a scalar function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace acr::fdcheck {

inline constexpr double kFdStep = 1e-3;

/// d f / d v for every entry of `values`, by central differences. `values` is modified
/// during the sweep and restored afterwards.
inline std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& f,
                                            double step = kFdStep) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = f();
        values[i] = saved - step;
        const double down = f();
        values[i] = saved;
        out[i] = (up - down) / (2.0 * step);
    }
    return out;
}

/// ||a - n|| / max(||a||, ||n||, 1e-6). The floor keeps tensors whose true gradient is
/// zero (a bias feeding batch norm) from turning finite-difference noise into a ratio of ~1.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
}

}  // namespace acr::fdcheck
