#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"
#include "acr/rng.hpp"

namespace acr::nn {

template <typename T>
struct LinearGrad {
    Matrix<T> weight;
    Vector<T> bias;
};

/// Fully connected layer: out = in * W^T + b.
template <typename T>
struct LinearLayer {
    Matrix<T> weight;  // out x in
    Vector<T> bias;    // out

    Index in_dim() const { return weight.cols(); }
    Index out_dim() const { return weight.rows(); }

    LinearGrad<T> zero_grad() const {
        return {Matrix<T>::Zero(weight.rows(), weight.cols()), Vector<T>::Zero(bias.size())};
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    static LinearLayer glorot(Index in, Index out, Rng& rng) {
        LinearLayer layer{Matrix<T>(out, in), Vector<T>::Zero(out)};
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (Index r = 0; r < out; ++r)
            for (Index c = 0; c < in; ++c)
                layer.weight(r, c) = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * limit);
        return layer;
    }
};

template <typename T>
struct LinearCache {
    std::optional<Matrix<T>> input;
};

template <typename T>
Matrix<T> linear_forward(const LinearLayer<T>& layer, const Matrix<T>& input) {
    detail::require_dims(input.cols() == layer.in_dim(),
                         "linear_forward: input has " + std::to_string(input.cols()) +
                             " columns, layer expects " + std::to_string(layer.in_dim()));
    Matrix<T> out = input * layer.weight.transpose();
    out.rowwise() += layer.bias.transpose();
    return out;
}

template <typename T>
Matrix<T> linear_forward(const LinearLayer<T>& layer, const Matrix<T>& input, LinearCache<T>& cache) {
    Matrix<T> out = linear_forward(layer, input);
    cache.input = input;
    return out;
}

/// Writes parameter gradients into `grad` and returns the gradient w.r.t. the input.
template <typename T>
Matrix<T> linear_backward(const LinearLayer<T>& layer, const LinearCache<T>& cache, const Matrix<T>& upstream,
                          LinearGrad<T>& grad) {
    if (!cache.input) throw StateError("linear_backward: no cached forward pass");
    const Matrix<T>& input = *cache.input;
    detail::require_dims(upstream.rows() == input.rows() && upstream.cols() == layer.out_dim(),
                         "linear_backward: upstream gradient shape mismatch");
    grad.weight.noalias() = upstream.transpose() * input;
    grad.bias = upstream.colwise().sum().transpose();
    return upstream * layer.weight;
}

}  // namespace acr::nn
