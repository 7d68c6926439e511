#pragma once

#include <optional>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"

namespace acr::nn {

template <typename T>
struct ReluCache {
    std::optional<Matrix<T>> input;
};

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& input) {
    return input.cwiseMax(T(0));
}

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& input, ReluCache<T>& cache) {
    cache.input = input;
    return relu_forward(input);
}

// Subgradient 0 at exactly 0.
template <typename T>
Matrix<T> relu_backward(const ReluCache<T>& cache, const Matrix<T>& upstream) {
    if (!cache.input) throw StateError("relu_backward: no cached forward pass");
    detail::require_dims(upstream.rows() == cache.input->rows() && upstream.cols() == cache.input->cols(),
                         "relu_backward: upstream gradient shape mismatch");
    return (cache.input->array() > T(0)).select(upstream, T(0));
}

}  // namespace acr::nn
