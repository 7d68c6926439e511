#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acr/error.hpp"
#include "acr/nn/activation.hpp"
#include "acr/nn/batchnorm.hpp"
#include "acr/nn/linear.hpp"
#include "acr/nn/tensor.hpp"
#include "acr/rng.hpp"

namespace acr::nn {

/// Layer stack description.
///
/// `widths` lists the output width of every linear layer; the last entry is the
/// representation (or logit) dimension. `bn_mask` has `widths.size() + 1` entries:
/// position 0 normalizes the raw input, position k >= 1 follows linear layer k.
/// Hidden layers are Linear -> [BN] -> ReLU; the last layer is Linear -> [BN].
struct MlpArchitecture {
    Index input_dim = 0;
    std::vector<Index> widths;
    std::vector<bool> bn_mask;
    double bn_eps = 1e-5;

    std::size_t num_linear() const { return widths.size(); }
    Index output_dim() const { return widths.empty() ? input_dim : widths.back(); }

    void validate() const {
        if (input_dim <= 0) throw ConfigError("architecture: input_dim must be positive");
        if (widths.empty()) throw ConfigError("architecture: at least one linear layer is required");
        for (Index w : widths)
            if (w <= 0) throw ConfigError("architecture: layer widths must be positive");
        if (bn_mask.size() != widths.size() + 1)
            throw ConfigError("architecture: bn_mask needs " + std::to_string(widths.size() + 1) +
                              " entries, got " + std::to_string(bn_mask.size()));
        if (!(bn_eps > 0.0)) throw ConfigError("architecture: bn_eps must be positive");
    }

    /// Hidden layers with BN, no input BN, BN on the output when `final_bn`.
    static MlpArchitecture standard(Index input_dim, std::vector<Index> widths, bool final_bn) {
        MlpArchitecture arch{input_dim, std::move(widths), {}, 1e-5};
        arch.bn_mask.assign(arch.widths.size() + 1, true);
        arch.bn_mask.front() = false;
        arch.bn_mask.back() = final_bn;
        return arch;
    }

    friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

template <typename T>
struct MlpGrad {
    std::vector<LinearGrad<T>> linear;
    std::vector<std::optional<BatchNormGrad<T>>> bn;
};

/// Everything the backward pass needs from one forward pass.
template <typename T>
struct MlpTape {
    bool valid = false;
    std::vector<LinearCache<T>> linear;
    std::vector<BatchNormCache<T>> bn;
    std::vector<ReluCache<T>> relu;
};

template <typename T>
class Mlp {
public:
    Mlp() = default;

    Mlp(MlpArchitecture arch, Rng& rng) : arch_(std::move(arch)) {
        arch_.validate();
        Index in = arch_.input_dim;
        bn_.resize(arch_.num_linear() + 1);
        if (arch_.bn_mask[0]) bn_[0] = BatchNormLayer<T>::make(in, static_cast<T>(arch_.bn_eps));
        for (std::size_t k = 0; k < arch_.num_linear(); ++k) {
            const Index out = arch_.widths[k];
            linear_.push_back(LinearLayer<T>::glorot(in, out, rng));
            if (arch_.bn_mask[k + 1]) bn_[k + 1] = BatchNormLayer<T>::make(out, static_cast<T>(arch_.bn_eps));
            in = out;
        }
    }

    const MlpArchitecture& architecture() const { return arch_; }
    std::vector<LinearLayer<T>>& linear_layers() { return linear_; }
    const std::vector<LinearLayer<T>>& linear_layers() const { return linear_; }
    std::vector<std::optional<BatchNormLayer<T>>>& bn_layers() { return bn_; }
    const std::vector<std::optional<BatchNormLayer<T>>>& bn_layers() const { return bn_; }

    Matrix<T> forward(const Matrix<T>& input, BnMode mode, MlpTape<T>& tape) const {
        detail::require_dims(input.cols() == arch_.input_dim,
                             "mlp forward: input has " + std::to_string(input.cols()) + " columns, expected " +
                                 std::to_string(arch_.input_dim));
        const std::size_t layers = linear_.size();
        tape.valid = false;
        tape.linear.assign(layers, {});
        tape.bn.assign(layers + 1, {});
        tape.relu.assign(layers, {});

        Matrix<T> h = bn_[0] ? batchnorm_forward(*bn_[0], input, mode, tape.bn[0]) : input;
        for (std::size_t k = 0; k < layers; ++k) {
            h = linear_forward(linear_[k], h, tape.linear[k]);
            if (bn_[k + 1]) h = batchnorm_forward(*bn_[k + 1], h, mode, tape.bn[k + 1]);
            if (k + 1 < layers) h = relu_forward(h, tape.relu[k]);
        }
        tape.valid = true;
        return h;
    }

    Matrix<T> forward(const Matrix<T>& input, BnMode mode) const {
        MlpTape<T> tape;
        return forward(input, mode, tape);
    }

    /// Backpropagates `upstream` (d loss / d output). Overwrites `grad`; returns d loss / d input.
    Matrix<T> backward(const MlpTape<T>& tape, const Matrix<T>& upstream, MlpGrad<T>& grad) const {
        if (!tape.valid) throw StateError("mlp backward: no cached forward pass");
        const std::size_t layers = linear_.size();
        if (grad.linear.size() != layers || grad.bn.size() != layers + 1) grad = zero_grad();
        Matrix<T> g = upstream;
        for (std::size_t k = layers; k-- > 0;) {
            if (k + 1 < layers) g = relu_backward(tape.relu[k], g);
            if (bn_[k + 1]) g = batchnorm_backward(*bn_[k + 1], tape.bn[k + 1], g, *grad.bn[k + 1]);
            g = linear_backward(linear_[k], tape.linear[k], g, grad.linear[k]);
        }
        if (bn_[0]) g = batchnorm_backward(*bn_[0], tape.bn[0], g, *grad.bn[0]);
        return g;
    }

    MlpGrad<T> zero_grad() const {
        MlpGrad<T> grad;
        for (const auto& l : linear_) grad.linear.push_back(l.zero_grad());
        for (const auto& b : bn_) grad.bn.push_back(b ? std::optional(b->zero_grad()) : std::nullopt);
        return grad;
    }

    /// Copies the batch statistics recorded in `tape` into every BN layer's frozen slot.
    void capture_frozen_stats(const MlpTape<T>& tape) {
        if (!tape.valid) throw StateError("capture_frozen_stats: tape is empty");
        for (std::size_t k = 0; k < bn_.size(); ++k) {
            if (!bn_[k]) continue;
            if (tape.bn[k].mode != BnMode::batch_stats)
                throw StateError("capture_frozen_stats: tape was not recorded with batch statistics");
            bn_[k]->frozen_mean = tape.bn[k].mean;
            bn_[k]->frozen_var = tape.bn[k].var;
        }
    }

    /// Parameter tensors in canonical order: input BN (gamma, beta), then per layer k
    /// weight, bias, BN gamma, BN beta. Inactive BN positions are skipped.
    std::vector<std::span<T>> parameters() {
        std::vector<std::span<T>> out;
        auto add = [&out](auto& tensor) { out.emplace_back(tensor.data(), static_cast<std::size_t>(tensor.size())); };
        if (bn_[0]) add(bn_[0]->gamma), add(bn_[0]->beta);
        for (std::size_t k = 0; k < linear_.size(); ++k) {
            add(linear_[k].weight), add(linear_[k].bias);
            if (bn_[k + 1]) add(bn_[k + 1]->gamma), add(bn_[k + 1]->beta);
        }
        return out;
    }

    std::vector<std::span<const T>> parameters() const {
        std::vector<std::span<const T>> out;
        for (const auto& p : const_cast<Mlp*>(this)->parameters()) out.emplace_back(p.data(), p.size());
        return out;
    }

    /// Same order as parameters().
    static std::vector<std::span<T>> gradient_views(MlpGrad<T>& grad) {
        std::vector<std::span<T>> out;
        auto add = [&out](auto& tensor) { out.emplace_back(tensor.data(), static_cast<std::size_t>(tensor.size())); };
        if (grad.bn[0]) add(grad.bn[0]->gamma), add(grad.bn[0]->beta);
        for (std::size_t k = 0; k < grad.linear.size(); ++k) {
            add(grad.linear[k].weight), add(grad.linear[k].bias);
            if (grad.bn[k + 1]) add(grad.bn[k + 1]->gamma), add(grad.bn[k + 1]->beta);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : linear_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        for (const auto& b : bn_)
            if (b) n += static_cast<std::size_t>(b->gamma.size() + b->beta.size());
        return n;
    }

private:
    MlpArchitecture arch_;
    std::vector<LinearLayer<T>> linear_;
    std::vector<std::optional<BatchNormLayer<T>>> bn_;
};

}  // namespace acr::nn
