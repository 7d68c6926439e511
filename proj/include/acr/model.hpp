#pragma once

#include <span>
#include <string>
#include <vector>

#include "acr/detectors.hpp"
#include "acr/error.hpp"
#include "acr/losses.hpp"
#include "acr/nn/mlp.hpp"
#include "acr/rng.hpp"

namespace acr {

template <typename T>
struct ModelGrad {
    nn::MlpGrad<T> net;
    Vector<T> center;  // empty for the BCE head
};

/// Feature extractor plus scoring head. Immutable once trained; scoring only allocates
/// call-local state, so one instance can be shared by concurrent scorers.
template <typename T>
struct DetectorModel {
    nn::Mlp<T> net;
    HeadKind head = HeadKind::dsvdd;
    DsvddHead<T> dsvdd;
    /// BN statistics source used by score()/latents().
    nn::BnMode test_mode = nn::BnMode::batch_stats;

    static DetectorModel create(nn::MlpArchitecture arch, HeadKind head, Rng& rng, T inverse_eps = T(1e-6)) {
        if (head == HeadKind::bce && arch.output_dim() != 1)
            throw ConfigError("bce head needs a final layer of width 1, got " + std::to_string(arch.output_dim()));
        DetectorModel model;
        model.net = nn::Mlp<T>(std::move(arch), rng);
        model.head = head;
        if (head == HeadKind::dsvdd) model.dsvdd.center = Vector<T>::Zero(model.net.architecture().output_dim());
        model.dsvdd.inverse_eps = inverse_eps;
        return model;
    }

    Index input_dim() const { return net.architecture().input_dim; }

    ScoreVector<T> scores_from_output(const Matrix<T>& out) const {
        if (head == HeadKind::dsvdd) return dsvdd_scores(out, dsvdd);
        return bce_scores<T>(out.col(0));
    }

    /// Network output for a batch, BN statistics per `mode`.
    Matrix<T> latents(const Matrix<T>& batch, nn::BnMode mode) const { return net.forward(batch, mode); }
    Matrix<T> latents(const Matrix<T>& batch) const { return latents(batch, test_mode); }

    ScoreVector<T> score(const Matrix<T>& batch, nn::BnMode mode) const {
        return scores_from_output(latents(batch, mode));
    }
    ScoreVector<T> score(const Matrix<T>& batch) const { return score(batch, test_mode); }

    ModelGrad<T> zero_grad() const {
        return {net.zero_grad(), head == HeadKind::dsvdd ? Vector<T>::Zero(dsvdd.center.size()) : Vector<T>()};
    }

    /// All trainable tensors; the DSVDD center comes last.
    std::vector<std::span<T>> parameters() {
        auto out = net.parameters();
        if (head == HeadKind::dsvdd) out.emplace_back(dsvdd.center.data(), static_cast<std::size_t>(dsvdd.center.size()));
        return out;
    }

    std::vector<std::span<const T>> parameters() const {
        auto out = net.parameters();
        if (head == HeadKind::dsvdd) out.emplace_back(dsvdd.center.data(), static_cast<std::size_t>(dsvdd.center.size()));
        return out;
    }

    static std::vector<std::span<T>> gradient_views(ModelGrad<T>& grad) {
        auto out = nn::Mlp<T>::gradient_views(grad.net);
        if (grad.center.size() > 0) out.emplace_back(grad.center.data(), static_cast<std::size_t>(grad.center.size()));
        return out;
    }
};

/// Result of one forward/backward pass over a single task batch.
template <typename T>
struct TaskPass {
    T loss = 0;
    ModelGrad<T> grad;
    nn::MlpTape<T> tape;
};

/// Loss of one batch and its gradient w.r.t. every model parameter. The batch is
/// normalized with its own statistics only (in batch_stats mode).
template <typename T>
TaskPass<T> task_loss_and_gradient(const DetectorModel<T>& model, const Matrix<T>& x, const Vector<T>& labels,
                                   LossKind loss, nn::BnMode mode) {
    detail::require_dims(x.rows() == labels.size(), "task_loss_and_gradient: row/label count mismatch");
    TaskPass<T> pass;
    const Matrix<T> out = model.net.forward(x, mode, pass.tape);
    const ScoreVector<T> scores = model.scores_from_output(out);
    pass.loss = evaluate_loss(loss, scores, labels);

    const ScoreGrad<T> sg = loss_score_gradient<T>(loss, labels);
    Matrix<T> dout;
    pass.grad = model.zero_grad();
    if (model.head == HeadKind::dsvdd) {
        dsvdd_backward(out, model.dsvdd, sg.ds, sg.da, dout, pass.grad.center);
        if (model.dsvdd.freeze_center) pass.grad.center.setZero();
    } else {
        dout = bce_backward<T>(out.col(0), sg.ds, sg.da);
    }
    model.net.backward(pass.tape, dout, pass.grad.net);
    return pass;
}

}  // namespace acr
