#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"

namespace acr {

/// Paired per-sample scores for one batch: `s` is the anomaly score (large on anomalies),
/// `a` the inverse score (large on normal samples).
template <typename T>
struct ScoreVector {
    Vector<T> s;
    Vector<T> a;

    Index size() const { return s.size(); }
};

enum class HeadKind { dsvdd, bce };

inline std::string_view to_string(HeadKind kind) { return kind == HeadKind::dsvdd ? "dsvdd" : "bce"; }

inline HeadKind parse_head_kind(std::string_view name) {
    if (name == "dsvdd") return HeadKind::dsvdd;
    if (name == "bce") return HeadKind::bce;
    throw ConfigError("unknown head '" + std::string(name) + "' (expected dsvdd or bce)");
}

template <typename T>
struct DsvddHead {
    Vector<T> center;
    T inverse_eps = T(1e-6);
    bool freeze_center = false;
};

/// s = |z - c|^2, a = 1 / (s + inverse_eps).
template <typename T>
ScoreVector<T> dsvdd_scores(const Matrix<T>& z, const DsvddHead<T>& head) {
    detail::require_dims(z.cols() == head.center.size(), "dsvdd_scores: latent dim " + std::to_string(z.cols()) +
                                                             " != center dim " + std::to_string(head.center.size()));
    ScoreVector<T> out;
    out.s = (z.rowwise() - head.center.transpose()).rowwise().squaredNorm();
    out.a = (out.s.array() + head.inverse_eps).inverse();
    return out;
}

/// Chain rule through dsvdd_scores. `ds`, `da` are d loss / d s and d loss / d a.
/// Writes d loss / d z into `dz` and d loss / d c into `dc`.
template <typename T>
void dsvdd_backward(const Matrix<T>& z, const DsvddHead<T>& head, const Vector<T>& ds, const Vector<T>& da,
                    Matrix<T>& dz, Vector<T>& dc) {
    const Matrix<T> diff = z.rowwise() - head.center.transpose();
    const Vector<T> s = diff.rowwise().squaredNorm();
    // da/ds = -1 / (s + eps)^2
    const Vector<T> total = ds.array() - da.array() * (s.array() + head.inverse_eps).square().inverse();
    dz = (diff.array().colwise() * (T(2) * total).array()).matrix();
    dc = -dz.colwise().sum().transpose();
}

/// log(1 + exp(t)) without overflow.
template <typename T>
T softplus(T t) {
    return t > T(0) ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

template <typename T>
T sigmoid(T t) {
    if (t >= T(0)) return T(1) / (T(1) + std::exp(-t));
    const T e = std::exp(t);
    return e / (T(1) + e);
}

/// s = -log(1 - sigmoid(t)) = softplus(t), a = -log(sigmoid(t)) = softplus(-t).
template <typename T>
ScoreVector<T> bce_scores(const Vector<T>& logits) {
    ScoreVector<T> out{Vector<T>(logits.size()), Vector<T>(logits.size())};
    for (Index i = 0; i < logits.size(); ++i) {
        out.s[i] = softplus(logits[i]);
        out.a[i] = softplus(-logits[i]);
    }
    return out;
}

/// d loss / d logit given d loss / d s and d loss / d a.
template <typename T>
Vector<T> bce_backward(const Vector<T>& logits, const Vector<T>& ds, const Vector<T>& da) {
    Vector<T> out(logits.size());
    for (Index i = 0; i < logits.size(); ++i) out[i] = ds[i] * sigmoid(logits[i]) - da[i] * sigmoid(-logits[i]);
    return out;
}

/// Parameter-free batch-level detector: squared norm of the batch-standardized sample.
/// Features whose batch variance is below `eps` contribute nothing.
template <typename T>
Vector<T> naive_bn_score(const Matrix<T>& batch, T eps = T(1e-12)) {
    if (batch.rows() < 2)
        throw BatchTooSmallError("naive_bn_score: need at least 2 rows, got " + std::to_string(batch.rows()));
    const RowVector<T> mean = batch.colwise().mean();
    const Matrix<T> centered = batch.rowwise() - mean;
    const RowVector<T> var = centered.array().square().colwise().mean();
    RowVector<T> weight(var.size());
    for (Index k = 0; k < var.size(); ++k) weight[k] = var[k] < eps ? T(0) : T(1) / var[k];
    return (centered.array().square().rowwise() * weight.array()).rowwise().sum();
}

}  // namespace acr
