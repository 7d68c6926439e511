#pragma once

#include <string>
#include <string_view>

#include "acr/detectors.hpp"
#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"

namespace acr {

enum class LossKind { meta_oe, one_class };

inline std::string_view to_string(LossKind kind) { return kind == LossKind::meta_oe ? "meta-oe" : "one-class"; }

inline LossKind parse_loss_kind(std::string_view name) {
    if (name == "meta-oe") return LossKind::meta_oe;
    if (name == "one-class") return LossKind::one_class;
    throw ConfigError("unknown loss '" + std::string(name) + "' (expected meta-oe or one-class)");
}

/// Meta outlier exposure: mean over the batch of (1 - y) * s + y * a.
template <typename T>
T meta_oe_loss(const ScoreVector<T>& scores, const Vector<T>& labels) {
    detail::require_dims(scores.s.size() == labels.size() && scores.a.size() == labels.size(),
                         "meta_oe_loss: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(scores.s.size()) + " scores");
    if (labels.size() == 0) throw DimensionError("meta_oe_loss: empty batch");
    T sum = 0;
    for (Index i = 0; i < labels.size(); ++i) sum += (T(1) - labels[i]) * scores.s[i] + labels[i] * scores.a[i];
    return sum / static_cast<T>(labels.size());
}

/// Mean anomaly score; labels are ignored.
template <typename T>
T one_class_loss(const ScoreVector<T>& scores) {
    if (scores.s.size() == 0) throw DimensionError("one_class_loss: empty batch");
    // Same summation order as meta_oe_loss so that y = 0 gives bit-identical values.
    T sum = 0;
    for (Index i = 0; i < scores.s.size(); ++i) sum += scores.s[i];
    return sum / static_cast<T>(scores.s.size());
}

/// d loss / d s and d loss / d a for either loss.
template <typename T>
struct ScoreGrad {
    Vector<T> ds;
    Vector<T> da;
};

template <typename T>
ScoreGrad<T> loss_score_gradient(LossKind kind, const Vector<T>& labels) {
    const Index n = labels.size();
    const T w = T(1) / static_cast<T>(n);
    if (kind == LossKind::one_class) return {Vector<T>::Constant(n, w), Vector<T>::Zero(n)};
    return {(Vector<T>::Ones(n) - labels) * w, labels * w};
}

template <typename T>
T evaluate_loss(LossKind kind, const ScoreVector<T>& scores, const Vector<T>& labels) {
    return kind == LossKind::meta_oe ? meta_oe_loss(scores, labels) : one_class_loss(scores);
}

}  // namespace acr
