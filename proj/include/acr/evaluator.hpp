#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acr/detectors.hpp"
#include "acr/error.hpp"
#include "acr/meta_tasks.hpp"
#include "acr/model.hpp"
#include "acr/rng.hpp"
#include "acr/trainer.hpp"

namespace acr {

/// Scores every row of `batch` relative to the batch: all BN statistics are recomputed
/// from this batch (unless the model was configured for a different test mode).
inline ScoreVector<double> score_batch(const DetectorModel<double>& model, const MatrixD& batch) {
    if (batch.rows() < 2)
        throw BatchTooSmallError("score_batch: batch-level scoring needs at least 2 rows, got " +
                                 std::to_string(batch.rows()));
    return model.score(batch);
}

/// 1 where score > tau.
inline std::vector<int> threshold_predict(std::span<const double> scores, double tau) {
    std::vector<int> out(scores.size());
    std::transform(scores.begin(), scores.end(), out.begin(), [tau](double s) { return s > tau ? 1 : 0; });
    return out;
}

/// Area under the ROC curve from tie-averaged ranks. Equals P(pos > neg) + P(pos == neg) / 2.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    detail::require_dims(scores.size() == labels.size(), "auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]] != 0) {
                positive_rank_sum += avg_rank;
                ++positives;
            }
        }
        i = j + 1;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0)
        throw UndefinedMetricError("auroc: needs at least one positive and one negative label");
    const double p = static_cast<double>(positives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auroc(std::span<const double>(scores), std::span<const int>(labels));
}

enum class LatentSource { train_mix, test };

struct LatentSample {
    MatrixD z;
    LatentSource source = LatentSource::test;
};

namespace detail {

inline double histogram_tv(const VectorD& a, const VectorD& b, std::size_t bins) {
    const double lo = std::min(a.minCoeff(), b.minCoeff());
    const double hi = std::max(a.maxCoeff(), b.maxCoeff());
    if (!(hi > lo)) return 0.0;
    const double width = (hi - lo) / static_cast<double>(bins);
    auto bin_of = [&](double v) {
        const auto k = static_cast<std::size_t>(std::floor((v - lo) / width));
        return std::min(k, bins - 1);
    };
    std::vector<double> p(bins, 0.0), q(bins, 0.0);
    for (Index i = 0; i < a.size(); ++i) p[bin_of(a[i])] += 1.0 / static_cast<double>(a.size());
    for (Index i = 0; i < b.size(); ++i) q[bin_of(b[i])] += 1.0 / static_cast<double>(b.size());
    double tv = 0.0;
    for (std::size_t k = 0; k < bins; ++k) tv += std::abs(p[k] - q[k]);
    return std::min(1.0, 0.5 * tv);
}

}  // namespace detail

/// Lower bound on the total variation distance between the distributions behind two
/// samples: the largest histogram TV over every coordinate axis and `random_directions`
/// random unit directions. Histograms share `bins` equal-width bins over the pooled range.
inline double tv_distance_diagnostic(const LatentSample& a, const LatentSample& b, std::size_t bins,
                                     std::size_t random_directions = 16, std::uint64_t seed = 0) {
    if (a.z.rows() == 0 || b.z.rows() == 0) throw DimensionError("tv_distance_diagnostic: empty sample");
    detail::require_dims(a.z.cols() == b.z.cols(), "tv_distance_diagnostic: samples differ in dimension");
    if (bins < 2) throw ConfigError("tv_distance_diagnostic: bins must be at least 2");

    double best = 0.0;
    for (Index k = 0; k < a.z.cols(); ++k) best = std::max(best, detail::histogram_tv(a.z.col(k), b.z.col(k), bins));

    Rng rng = make_rng(seed, 0x7d);
    for (std::size_t r = 0; r < random_directions; ++r) {
        VectorD dir(a.z.cols());
        for (Index k = 0; k < dir.size(); ++k) dir[k] = standard_normal(rng);
        if (dir.norm() == 0.0) continue;
        dir.normalize();
        best = std::max(best, detail::histogram_tv(a.z * dir, b.z * dir, bins));
    }
    return best;
}

/// Default bin count: ceil(sqrt(n)) for the smaller sample.
inline std::size_t default_tv_bins(const LatentSample& a, const LatentSample& b) {
    const auto n = static_cast<double>(std::min(a.z.rows(), b.z.rows()));
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(std::sqrt(n))));
}

struct EvalConfig {
    /// Test contamination rates pi~: fraction of normal samples in a test set.
    std::vector<double> ratios = {0.99, 0.95, 0.9, 0.8};
    std::size_t runs = 5;
    std::uint64_t seed = 0;
    Index batch_size = 60;
    /// Rows per (run, normal distribution) test set; rounded down to whole batches.
    Index test_set_size = 1200;
    std::optional<double> threshold;
    unsigned threads = 1;

    void validate() const {
        if (ratios.empty()) throw ConfigError("eval: at least one ratio is required");
        for (double r : ratios)
            if (!(r > 0.0 && r < 1.0)) throw ConfigError("eval: ratios must lie in (0, 1), got " + std::to_string(r));
        if (runs < 1) throw ConfigError("eval: runs must be at least 1");
        if (batch_size < 2) throw ConfigError("eval: batch size must be at least 2");
        if (test_set_size < batch_size) throw ConfigError("eval: test_set_size must hold at least one batch");
        if (threads < 1) throw ConfigError("eval: threads must be at least 1");
    }
};

struct RatioCell {
    double ratio = 0.0;  // pi~
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> per_run;  // mean over normal distributions, one per run
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

struct EvalReport {
    double auroc = 0.0;  // mean over cells
    std::vector<RatioCell> cells;
    std::optional<double> threshold;
    ConfusionCounts confusion;
    std::optional<double> tv_estimate;

    const RatioCell& cell(double ratio) const {
        for (const auto& c : cells)
            if (std::abs(c.ratio - ratio) < 1e-12) return c;
        throw ConfigError("eval report has no cell for ratio " + std::to_string(ratio));
    }
};

/// Scores of one contaminated test set: rows shuffled, chunked into batches of
/// `batch_size`, every batch scored on its own.
struct ScoredSet {
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Test set for normal distribution `j` at contamination `ratio` (fraction of normals).
/// Normal rows are drawn without replacement when the pool is large enough.
inline TaskBatch build_test_set(const MetaDataset& test, std::size_t j, double ratio, Index batch_size,
                                Index test_set_size, Rng& rng) {
    const Index batches = test_set_size / batch_size;
    const Index total = batches * batch_size;
    const Index anomalies = total - static_cast<Index>(std::lround(ratio * static_cast<double>(total)));
    const Index normals = total - anomalies;
    const bool use_pool = test.has_anomaly_pool(j);
    const bool normal_fits = normals <= test.pools[j].rows();
    bool anomaly_fits;
    if (use_pool) {
        anomaly_fits = anomalies <= test.anomaly_pools[j].rows();
    } else {
        anomaly_fits = true;
        for (std::size_t i = 0; i < test.size(); ++i)
            if (i != j && test.pools[i].rows() < anomalies) anomaly_fits = false;
    }
    return build_task(test, j, normals, anomalies, !(normal_fits && anomaly_fits), rng, use_pool);
}

inline ScoredSet score_test_set(const DetectorModel<double>& model, const TaskBatch& set, Index batch_size) {
    ScoredSet out;
    const Index batches = set.x.rows() / batch_size;
    for (Index b = 0; b < batches; ++b) {
        const MatrixD chunk = set.x.middleRows(b * batch_size, batch_size);
        const auto scores = score_batch(model, chunk);
        for (Index i = 0; i < batch_size; ++i) {
            out.scores.push_back(scores.s[i]);
            out.labels.push_back(set.y[b * batch_size + i] > 0.5 ? 1 : 0);
        }
    }
    return out;
}

/// Zero-shot evaluation on unseen distributions. For every ratio, run and normal
/// distribution a fresh contaminated test set is scored batch by batch and its pooled AUROC
/// recorded; a run's value is the mean over normal distributions, and each cell reports
/// mean and sample standard deviation over runs.
inline EvalReport evaluate(const DetectorModel<double>& model, const MetaDataset& test, const EvalConfig& cfg) {
    cfg.validate();
    test.validate();
    if (test.dim() != model.input_dim())
        throw DimensionError("evaluate: test features " + std::to_string(test.dim()) + " != model input " +
                             std::to_string(model.input_dim()));
    for (std::size_t j = 0; j < test.size(); ++j)
        if (!test.has_anomaly_pool(j) && test.size() < 2)
            throw ConfigError("evaluate: distribution " + std::to_string(test.ids[j]) +
                              " has no anomaly pool and no other distribution to draw anomalies from");

    const std::size_t n_ratio = cfg.ratios.size();
    const std::size_t n_class = test.size();
    const std::size_t cells = n_ratio * cfg.runs * n_class;
    std::vector<double> aurocs(cells);
    std::vector<ConfusionCounts> confusion(cells);

    detail::parallel_for(cells, cfg.threads, [&](std::size_t idx) {
        const std::size_t r = idx / (cfg.runs * n_class);
        const std::size_t run = (idx / n_class) % cfg.runs;
        const std::size_t j = idx % n_class;
        Rng rng = make_rng(derive_seed(cfg.seed, run), r * 1000003 + j);
        const TaskBatch set = build_test_set(test, j, cfg.ratios[r], cfg.batch_size, cfg.test_set_size, rng);
        const ScoredSet scored = score_test_set(model, set, cfg.batch_size);
        aurocs[idx] = auroc(scored.scores, scored.labels);
        if (cfg.threshold) {
            const auto pred = threshold_predict(scored.scores, *cfg.threshold);
            auto& c = confusion[idx];
            for (std::size_t i = 0; i < pred.size(); ++i) {
                if (pred[i] == 1 && scored.labels[i] == 1) ++c.tp;
                else if (pred[i] == 1) ++c.fp;
                else if (scored.labels[i] == 1) ++c.fn;
                else ++c.tn;
            }
        }
    });

    EvalReport report;
    report.threshold = cfg.threshold;
    double total = 0.0;
    for (std::size_t r = 0; r < n_ratio; ++r) {
        RatioCell cell;
        cell.ratio = cfg.ratios[r];
        for (std::size_t run = 0; run < cfg.runs; ++run) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n_class; ++j) sum += aurocs[(r * cfg.runs + run) * n_class + j];
            cell.per_run.push_back(sum / static_cast<double>(n_class));
        }
        const double n = static_cast<double>(cfg.runs);
        cell.mean = std::accumulate(cell.per_run.begin(), cell.per_run.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : cell.per_run) ss += (v - cell.mean) * (v - cell.mean);
        cell.std = cfg.runs > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        total += cell.mean;
        report.cells.push_back(std::move(cell));
    }
    report.auroc = total / static_cast<double>(n_ratio);
    for (const auto& c : confusion) {
        report.confusion.tp += c.tp;
        report.confusion.fp += c.fp;
        report.confusion.tn += c.tn;
        report.confusion.fn += c.fn;
    }
    return report;
}

/// Latents and raw inputs of a collection of batches, each batch passed through the
/// network on its own.
struct LatentCollection {
    LatentSample latent;
    LatentSample raw;
};

inline LatentCollection collect_latents(const DetectorModel<double>& model, const std::vector<TaskBatch>& batches,
                                        LatentSource source) {
    Index rows = 0;
    for (const auto& b : batches) rows += b.x.rows();
    LatentCollection out{{MatrixD(rows, model.net.architecture().output_dim()), source},
                         {MatrixD(rows, model.input_dim()), source}};
    Index at = 0;
    for (const auto& b : batches) {
        out.latent.z.middleRows(at, b.x.rows()) = model.latents(b.x);
        out.raw.z.middleRows(at, b.x.rows()) = b.x;
        at += b.x.rows();
    }
    return out;
}

struct TvDiagnostic {
    double latent = 0.0;
    double raw = 0.0;
};

/// TV lower bound between the training mixture and unseen test batches, both on the
/// model's final-layer representation and on the raw inputs.
inline TvDiagnostic tv_train_vs_test(const DetectorModel<double>& model, const MetaDataset& train,
                                     const MetaDataset& test, const MixtureConfig& train_mix, double test_ratio,
                                     std::size_t batches, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x7e);
    std::vector<TaskBatch> train_batches, test_batches;
    for (std::size_t k = 0; k < batches; ++k) {
        train_batches.push_back(build_contaminated_task(train, uniform_index(rng, train.size()), train_mix, rng));
        test_batches.push_back(build_test_set(test, uniform_index(rng, test.size()), test_ratio,
                                              train_mix.batch_size, train_mix.batch_size, rng));
    }
    const auto a = collect_latents(model, train_batches, LatentSource::train_mix);
    const auto b = collect_latents(model, test_batches, LatentSource::test);
    const std::size_t bins = default_tv_bins(a.latent, b.latent);
    return {tv_distance_diagnostic(a.latent, b.latent, bins, 16, seed),
            tv_distance_diagnostic(a.raw, b.raw, bins, 16, seed)};
}

}  // namespace acr
