#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"

namespace acr::nn {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
    AdamConfig config;
    std::vector<Vector<T>> m;
    std::vector<Vector<T>> v;
    std::uint64_t step = 0;

    OptimizerState() = default;
    explicit OptimizerState(AdamConfig cfg) : config(cfg) {}
};

/// One bias-corrected Adam update over a list of parameter tensors. Moment buffers are
/// allocated on the first call and must keep their shapes afterwards.
template <typename T>
void adam_step(OptimizerState<T>& state, std::span<const std::span<T>> params,
               std::span<const std::span<const T>> grads) {
    detail::require_dims(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Vector<T>::Zero(static_cast<Index>(p.size())));
            state.v.push_back(Vector<T>::Zero(static_cast<Index>(p.size())));
        }
    }
    detail::require_dims(state.m.size() == params.size(), "adam_step: parameter count changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
        detail::require_dims(params[k].size() == grads[k].size() &&
                                 static_cast<Index>(params[k].size()) == state.m[k].size(),
                             "adam_step: shape mismatch in parameter " + std::to_string(k));
    }

    ++state.step;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double g = static_cast<double>(grads[k][i]);
            const Index ii = static_cast<Index>(i);
            m[ii] = static_cast<T>(c.beta1 * m[ii] + (1.0 - c.beta1) * g);
            v[ii] = static_cast<T>(c.beta2 * v[ii] + (1.0 - c.beta2) * g * g);
            const double m_hat = m[ii] / correction1;
            const double v_hat = v[ii] / correction2;
            params[k][i] -= static_cast<T>(c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps));
        }
    }
}

}  // namespace acr::nn
