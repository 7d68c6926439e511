#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "acr/error.hpp"
#include "acr/losses.hpp"
#include "acr/meta_tasks.hpp"
#include "acr/model.hpp"
#include "acr/nn/adam.hpp"
#include "acr/nn/mlp.hpp"
#include "acr/rng.hpp"

namespace acr {

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t tasks_per_iteration = 8;
    Index batch_size = 60;
    double pi = 0.8;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
    HeadKind head = HeadKind::dsvdd;
    std::vector<Index> hidden = {64, 64, 64};
    Index latent_dim = 32;
    /// Empty means: BN after every hidden layer, on the output for DSVDD, none on the input.
    std::vector<bool> bn_mask;
    nn::BnMode bn_mode = nn::BnMode::batch_stats;
    LossKind loss = LossKind::meta_oe;
    bool freeze_center = false;
    double inverse_eps = 1e-6;
    double bn_eps = 1e-5;
    bool with_replacement = true;
    /// Worker threads for the per-task passes of one iteration. Results do not depend on it.
    unsigned threads = 1;

    MixtureConfig mixture() const { return {pi, batch_size, tasks_per_iteration, with_replacement}; }

    nn::MlpArchitecture architecture(Index input_dim) const {
        std::vector<Index> widths = hidden;
        widths.push_back(head == HeadKind::dsvdd ? latent_dim : 1);
        nn::MlpArchitecture arch = nn::MlpArchitecture::standard(input_dim, std::move(widths), head == HeadKind::dsvdd);
        if (!bn_mask.empty()) arch.bn_mask = bn_mask;
        arch.bn_eps = bn_eps;
        return arch;
    }

    void validate() const {
        if (iterations < 1) throw ConfigError("train: iterations must be at least 1");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (!(inverse_eps > 0.0)) throw ConfigError("train: inverse_eps must be positive");
        if (latent_dim <= 0) throw ConfigError("train: latent_dim must be positive");
        if (threads < 1) throw ConfigError("train: threads must be at least 1");
        mixture().validate();
        if (!bn_mask.empty() && bn_mask.size() != hidden.size() + 2)
            throw ConfigError("train: bn_mask needs " + std::to_string(hidden.size() + 2) + " entries (input, " +
                              std::to_string(hidden.size()) + " hidden, output), got " +
                              std::to_string(bn_mask.size()));
    }
};

struct TrainReport {
    std::vector<double> loss_curve;  // one mean task loss per iteration
    double wall_clock_seconds = 0.0;
    std::uint64_t seed = 0;

    double final_loss() const { return loss_curve.empty() ? 0.0 : loss_curve.back(); }

    /// Mean of the curve over iterations [from, end).
    double mean_after(std::size_t from) const {
        if (from >= loss_curve.size()) return final_loss();
        double sum = 0.0;
        for (std::size_t i = from; i < loss_curve.size(); ++i) sum += loss_curve[i];
        return sum / static_cast<double>(loss_curve.size() - from);
    }
};

struct TrainResult {
    DetectorModel<double> model;
    TrainReport report;
};

/// Infimum of the per-distribution-summed meta-OE loss of a DSVDD without batch
/// normalization on two training distributions: 4 sqrt(pi (1 - pi)).
inline double no_bn_trivial_loss_value(double pi) {
    if (!(pi >= 0.5 && pi <= 1.0))
        throw DomainError("no_bn_trivial_loss_value: pi must lie in [0.5, 1], got " + std::to_string(pi));
    return 4.0 * std::sqrt(pi * (1.0 - pi));
}

namespace detail {

/// Element-wise mean of equally shaped vectors that does not depend on their order:
/// each element's contributions are sorted before summation.
inline std::vector<double> order_invariant_mean(const std::vector<std::vector<double>>& parts) {
    if (parts.empty()) return {};
    const std::size_t n = parts.front().size();
    std::vector<double> out(n);
    std::vector<double> column(parts.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < parts.size(); ++m) column[m] = parts[m][i];
        std::sort(column.begin(), column.end());
        double sum = 0.0;
        for (double v : column) sum += v;
        out[i] = sum / static_cast<double>(parts.size());
    }
    return out;
}

inline std::vector<double> flatten(std::vector<std::span<double>> views) {
    std::vector<double> out;
    for (const auto& v : views) out.insert(out.end(), v.begin(), v.end());
    return out;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    const std::size_t n_workers = std::min<std::size_t>(threads, count);
    for (std::size_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += n_workers) fn(i);
        });
    }
    for (auto& t : workers) t.join();
}

}  // namespace detail

/// Training-time BN statistics source for a configured bn_mode: everything except the
/// identity ablation normalizes with the current task batch.
inline nn::BnMode training_bn_mode(nn::BnMode configured) {
    return configured == nn::BnMode::identity ? nn::BnMode::identity : nn::BnMode::batch_stats;
}

/// One parameter update on an explicit list of tasks: per-task forward/backward passes
/// (statistics never mix across tasks), order-independent averaging, one Adam step.
/// Returns the mean task loss. The update is skipped when the loss or gradient is not finite.
inline double meta_update(DetectorModel<double>& model, nn::OptimizerState<double>& optimizer,
                          const std::vector<TaskBatch>& tasks, const TrainConfig& cfg,
                          nn::MlpTape<double>* last_tape = nullptr) {
    const nn::BnMode mode = training_bn_mode(cfg.bn_mode);
    std::vector<TaskPass<double>> passes(tasks.size());
    detail::parallel_for(tasks.size(), cfg.threads, [&](std::size_t m) {
        passes[m] = task_loss_and_gradient(model, tasks[m].x, tasks[m].y, cfg.loss, mode);
    });

    std::vector<std::vector<double>> losses(tasks.size(), std::vector<double>(1));
    std::vector<std::vector<double>> grads(tasks.size());
    for (std::size_t m = 0; m < tasks.size(); ++m) {
        losses[m][0] = passes[m].loss;
        grads[m] = detail::flatten(DetectorModel<double>::gradient_views(passes[m].grad));
    }
    const double loss = detail::order_invariant_mean(losses)[0];
    std::vector<double> mean_grad = detail::order_invariant_mean(grads);
    if (last_tape != nullptr && !passes.empty()) *last_tape = std::move(passes.back().tape);

    const bool finite = std::isfinite(loss) &&
                        std::all_of(mean_grad.begin(), mean_grad.end(), [](double g) { return std::isfinite(g); });
    if (!finite) return std::isfinite(loss) ? std::nan("") : loss;

    auto params = model.parameters();
    std::vector<std::span<const double>> grad_views;
    std::size_t offset = 0;
    for (const auto& p : params) {
        grad_views.emplace_back(mean_grad.data() + offset, p.size());
        offset += p.size();
    }
    nn::adam_step<double>(optimizer, params, grad_views);
    return loss;
}

/// Meta-training: T iterations of (sample M contaminated tasks, average their losses,
/// one Adam step). Aborts with DivergenceError after 5 consecutive non-finite losses.
inline TrainResult train(const MetaDataset& meta, const TrainConfig& cfg) {
    cfg.validate();
    meta.validate();
    if (cfg.pi < 1.0 && meta.size() < 2)
        throw ConfigError("train: pi < 1 needs at least 2 training distributions, got " + std::to_string(meta.size()));

    const auto start = std::chrono::steady_clock::now();
    Rng init_rng = make_rng(cfg.seed, 0);
    Rng task_rng = make_rng(cfg.seed, 1);

    TrainResult result;
    result.model = DetectorModel<double>::create(cfg.architecture(meta.dim()), cfg.head, init_rng, cfg.inverse_eps);
    result.model.dsvdd.freeze_center = cfg.freeze_center;
    result.report.seed = cfg.seed;
    result.report.loss_curve.reserve(cfg.iterations);

    nn::OptimizerState<double> optimizer(nn::AdamConfig{cfg.learning_rate});
    const MixtureConfig mix = cfg.mixture();
    nn::MlpTape<double> last_tape;
    int non_finite_run = 0;

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const auto tasks = sample_iteration_tasks(meta, mix, task_rng);
        const bool last = t + 1 == cfg.iterations;
        const double loss = meta_update(result.model, optimizer, tasks, cfg, last ? &last_tape : nullptr);
        result.report.loss_curve.push_back(loss);
        if (!std::isfinite(loss)) {
            if (++non_finite_run >= 5)
                throw DivergenceError("train: loss not finite for 5 consecutive iterations (last at iteration " +
                                      std::to_string(t) + ")");
        } else {
            non_finite_run = 0;
        }
    }

    if (cfg.bn_mode != nn::BnMode::identity) result.model.net.capture_frozen_stats(last_tape);
    result.model.test_mode = cfg.bn_mode;
    result.report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace acr
