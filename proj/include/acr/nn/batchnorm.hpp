#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"

namespace acr::nn {

/// How a batch-norm layer obtains its normalization statistics.
///   batch_stats: mean and biased variance of the current batch, always, also at test time.
///   identity:    no normalization, the layer reduces to gamma * x + beta.
///   frozen:      statistics captured from the last training batch are used as constants.
enum class BnMode { batch_stats, identity, frozen };

inline std::string_view to_string(BnMode mode) {
    switch (mode) {
        case BnMode::batch_stats: return "batch-stats";
        case BnMode::identity: return "identity";
        case BnMode::frozen: return "frozen";
    }
    return "?";
}

inline BnMode parse_bn_mode(std::string_view name) {
    if (name == "batch-stats") return BnMode::batch_stats;
    if (name == "identity") return BnMode::identity;
    if (name == "frozen") return BnMode::frozen;
    throw ConfigError("unknown bn_mode '" + std::string(name) + "' (expected batch-stats, identity or frozen)");
}

template <typename T>
struct BatchNormGrad {
    Vector<T> gamma;
    Vector<T> beta;
};

template <typename T>
struct BatchNormLayer {
    Vector<T> gamma;
    Vector<T> beta;
    T eps = T(1e-5);
    // Set by capture from a training batch; only read in BnMode::frozen.
    std::optional<Vector<T>> frozen_mean;
    std::optional<Vector<T>> frozen_var;

    static BatchNormLayer make(Index features, T eps = T(1e-5)) {
        return {Vector<T>::Ones(features), Vector<T>::Zero(features), eps, std::nullopt, std::nullopt};
    }

    Index features() const { return gamma.size(); }

    BatchNormGrad<T> zero_grad() const { return {Vector<T>::Zero(gamma.size()), Vector<T>::Zero(beta.size())}; }
};

/// Per-call state needed by the backward pass. Owned by the caller so that a shared
/// layer can be evaluated concurrently.
template <typename T>
struct BatchNormCache {
    bool valid = false;
    BnMode mode = BnMode::batch_stats;
    Matrix<T> input;
    Matrix<T> normalized;  // x_hat; equals input in identity mode
    Vector<T> mean;
    Vector<T> var;  // biased
    Vector<T> inv_std;
};

template <typename T>
Matrix<T> batchnorm_forward(const BatchNormLayer<T>& layer, const Matrix<T>& input, BnMode mode,
                            BatchNormCache<T>& cache) {
    const Index rows = input.rows();
    detail::require_dims(input.cols() == layer.features(),
                         "batchnorm_forward: input has " + std::to_string(input.cols()) + " features, layer has " +
                             std::to_string(layer.features()));
    cache.valid = false;
    cache.mode = mode;
    cache.input = input;

    switch (mode) {
        case BnMode::batch_stats: {
            if (rows < 2)
                throw BatchTooSmallError("batchnorm_forward: batch statistics need at least 2 rows, got " +
                                         std::to_string(rows));
            cache.mean = input.colwise().mean().transpose();
            const Matrix<T> centered = input.rowwise() - cache.mean.transpose();
            cache.var = centered.array().square().colwise().mean().transpose();
            cache.inv_std = (cache.var.array() + layer.eps).rsqrt();
            cache.normalized = centered.array().rowwise() * cache.inv_std.transpose().array();
            break;
        }
        case BnMode::frozen: {
            if (!layer.frozen_mean || !layer.frozen_var)
                throw StateError("batchnorm_forward: frozen mode requested but no statistics were captured");
            cache.mean = *layer.frozen_mean;
            cache.var = *layer.frozen_var;
            cache.inv_std = (cache.var.array() + layer.eps).rsqrt();
            cache.normalized = (input.rowwise() - cache.mean.transpose()).array().rowwise() *
                               cache.inv_std.transpose().array();
            break;
        }
        case BnMode::identity: {
            cache.mean = Vector<T>::Zero(layer.features());
            cache.var = Vector<T>::Ones(layer.features());
            cache.inv_std = Vector<T>::Ones(layer.features());
            cache.normalized = input;
            break;
        }
    }
    cache.valid = true;
    Matrix<T> out = cache.normalized.array().rowwise() * layer.gamma.transpose().array();
    out.rowwise() += layer.beta.transpose();
    return out;
}

template <typename T>
Matrix<T> batchnorm_forward(const BatchNormLayer<T>& layer, const Matrix<T>& input, bool use_batch_stats,
                            BatchNormCache<T>& cache) {
    return batchnorm_forward(layer, input, use_batch_stats ? BnMode::batch_stats : BnMode::identity, cache);
}

template <typename T>
Matrix<T> batchnorm_forward(const BatchNormLayer<T>& layer, const Matrix<T>& input, bool use_batch_stats) {
    BatchNormCache<T> cache;
    return batchnorm_forward(layer, input, use_batch_stats, cache);
}

template <typename T>
Matrix<T> batchnorm_forward(const BatchNormLayer<T>& layer, const Matrix<T>& input, BnMode mode) {
    BatchNormCache<T> cache;
    return batchnorm_forward(layer, input, mode, cache);
}

/// Gradient w.r.t. input and parameters. In batch_stats mode the mean and variance are
/// functions of every row, so each input gradient couples to the whole batch.
template <typename T>
Matrix<T> batchnorm_backward(const BatchNormLayer<T>& layer, const BatchNormCache<T>& cache,
                             const Matrix<T>& upstream, BatchNormGrad<T>& grad) {
    if (!cache.valid) throw StateError("batchnorm_backward: no cached forward pass");
    detail::require_dims(upstream.rows() == cache.input.rows() && upstream.cols() == cache.input.cols(),
                         "batchnorm_backward: upstream gradient shape mismatch");

    grad.beta = upstream.colwise().sum().transpose();
    grad.gamma = (upstream.array() * cache.normalized.array()).colwise().sum().transpose();

    const Matrix<T> dnorm = upstream.array().rowwise() * layer.gamma.transpose().array();
    if (cache.mode != BnMode::batch_stats) {
        return dnorm.array().rowwise() * cache.inv_std.transpose().array();
    }

    // dx = inv_std / B * (B * dx_hat - sum(dx_hat) - x_hat * sum(dx_hat * x_hat))
    const T batch = static_cast<T>(upstream.rows());
    const RowVector<T> sum_dnorm = dnorm.colwise().sum();
    const RowVector<T> sum_dnorm_xhat = (dnorm.array() * cache.normalized.array()).colwise().sum();
    Matrix<T> dx = (dnorm * batch).rowwise() - sum_dnorm;
    dx.array() -= cache.normalized.array().rowwise() * sum_dnorm_xhat.array();
    dx.array().rowwise() *= (cache.inv_std.transpose().array() / batch);
    return dx;
}

}  // namespace acr::nn
