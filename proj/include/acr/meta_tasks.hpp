#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "acr/error.hpp"
#include "acr/nn/tensor.hpp"
#include "acr/rng.hpp"

namespace acr {

/// A set of related distributions, each represented by a pool of samples (one row per sample).
///
/// `anomaly_pools` is either empty or has one entry per distribution. A non-empty entry holds
/// labeled anomalies for that distribution; when present, evaluation draws anomalies from it
/// instead of from the other distributions.
struct MetaDataset {
    std::vector<MatrixD> pools;
    std::vector<int> ids;
    std::vector<MatrixD> anomaly_pools;

    std::size_t size() const { return pools.size(); }
    Index dim() const { return pools.empty() ? 0 : pools.front().cols(); }

    bool has_anomaly_pool(std::size_t j) const {
        return j < anomaly_pools.size() && anomaly_pools[j].rows() > 0;
    }

    /// Appends a distribution. Ids default to the position.
    void add(MatrixD pool, int id = -1) {
        if (!pools.empty() && pool.cols() != dim())
            throw DimensionError("MetaDataset: pool has " + std::to_string(pool.cols()) + " features, expected " +
                                 std::to_string(dim()));
        ids.push_back(id < 0 ? static_cast<int>(pools.size()) : id);
        pools.push_back(std::move(pool));
        if (!anomaly_pools.empty()) anomaly_pools.emplace_back(0, dim());
    }

    void validate() const {
        if (pools.empty()) throw ConfigError("MetaDataset: needs at least one distribution");
        if (ids.size() != pools.size()) throw ConfigError("MetaDataset: ids/pools size mismatch");
        for (const auto& p : pools) {
            if (p.cols() != dim()) throw DimensionError("MetaDataset: pools disagree on feature dimension");
            if (p.rows() == 0) throw ConfigError("MetaDataset: empty pool");
        }
        if (!anomaly_pools.empty() && anomaly_pools.size() != pools.size())
            throw ConfigError("MetaDataset: anomaly_pools must be empty or match pools");
    }
};

/// One contaminated mini-batch. y = 0 marks rows drawn from the source distribution.
struct TaskBatch {
    MatrixD x;
    VectorD y;
    std::size_t source = 0;

    Index batch_size() const { return x.rows(); }
    Index normal_count() const { return static_cast<Index>(std::lround((VectorD::Ones(y.size()) - y).sum())); }
};

struct MixtureConfig {
    double pi = 0.8;
    Index batch_size = 60;
    std::size_t tasks_per_iteration = 32;
    bool with_replacement = true;

    /// round(pi * B); rows of the batch drawn from the source distribution.
    Index normal_count() const { return static_cast<Index>(std::lround(pi * static_cast<double>(batch_size))); }

    void validate() const {
        if (!(pi > 0.5 && pi <= 1.0)) throw ConfigError("mixture: pi must lie in (0.5, 1], got " + std::to_string(pi));
        if (batch_size < 2) throw ConfigError("mixture: batch size must be at least 2");
        if (tasks_per_iteration < 1) throw ConfigError("mixture: tasks per iteration must be at least 1");
        if (2 * normal_count() <= batch_size)
            throw ConfigError("mixture: round(pi * B) = " + std::to_string(normal_count()) +
                              " does not give normal samples the majority of a batch of " +
                              std::to_string(batch_size));
    }
};

namespace detail {

/// `count` row indices of a pool of `pool_rows`, uniform with or without replacement.
inline std::vector<Index> draw_rows(Index pool_rows, Index count, bool with_replacement, Rng& rng,
                                    const std::string& what) {
    std::vector<Index> rows(static_cast<std::size_t>(count));
    if (with_replacement) {
        if (pool_rows == 0 && count > 0) throw SamplingError(what + ": empty pool");
        for (auto& r : rows) r = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(pool_rows)));
        return rows;
    }
    if (count > pool_rows)
        throw SamplingError(what + ": requested " + std::to_string(count) + " rows without replacement from a pool of " +
                            std::to_string(pool_rows));
    std::vector<Index> all(static_cast<std::size_t>(pool_rows));
    std::iota(all.begin(), all.end(), Index{0});
    // partial Fisher-Yates
    for (Index i = 0; i < count; ++i) {
        const auto j = static_cast<std::size_t>(i) +
                       uniform_index(rng, static_cast<std::size_t>(pool_rows - i));
        std::swap(all[static_cast<std::size_t>(i)], all[j]);
        rows[static_cast<std::size_t>(i)] = all[static_cast<std::size_t>(i)];
    }
    return rows;
}

}  // namespace detail

/// Builds a batch of `n_normal` rows from distribution `j` (y = 0) and `n_anomalous` rows
/// from its complement (y = 1), shuffled. Complement rows come from a donor distribution
/// i != j picked uniformly, then a uniform row of that donor, or from j's labeled anomaly
/// pool when `use_anomaly_pool` is set.
inline TaskBatch build_task(const MetaDataset& meta, std::size_t j, Index n_normal, Index n_anomalous,
                            bool with_replacement, Rng& rng, bool use_anomaly_pool = false) {
    if (j >= meta.size()) throw ConfigError("task: distribution index " + std::to_string(j) + " out of range");
    const Index batch = n_normal + n_anomalous;
    const Index d = meta.dim();
    TaskBatch task{MatrixD(batch, d), VectorD(batch), j};

    std::vector<Index> order(static_cast<std::size_t>(batch));
    std::iota(order.begin(), order.end(), Index{0});
    shuffle(order.begin(), order.end(), rng);

    const auto normal_rows = detail::draw_rows(meta.pools[j].rows(), n_normal, with_replacement, rng,
                                               "distribution " + std::to_string(meta.ids[j]));
    Index slot = 0;
    for (Index r : normal_rows) {
        const Index dst = order[static_cast<std::size_t>(slot++)];
        task.x.row(dst) = meta.pools[j].row(r);
        task.y[dst] = 0.0;
    }

    if (n_anomalous > 0 && use_anomaly_pool) {
        const MatrixD& pool = meta.anomaly_pools.at(j);
        const auto rows = detail::draw_rows(pool.rows(), n_anomalous, with_replacement, rng,
                                            "anomaly pool of distribution " + std::to_string(meta.ids[j]));
        for (Index r : rows) {
            const Index dst = order[static_cast<std::size_t>(slot++)];
            task.x.row(dst) = pool.row(r);
            task.y[dst] = 1.0;
        }
    } else if (n_anomalous > 0) {
        if (meta.size() < 2)
            throw ConfigError("task: contamination needs at least 2 distributions, meta-set has 1");
        // Without replacement: track per-donor draws so no row repeats.
        std::vector<std::vector<Index>> remaining;
        if (!with_replacement) {
            for (std::size_t i = 0; i < meta.size(); ++i) {
                remaining.emplace_back(static_cast<std::size_t>(i == j ? 0 : meta.pools[i].rows()));
                std::iota(remaining.back().begin(), remaining.back().end(), Index{0});
            }
        }
        for (Index k = 0; k < n_anomalous; ++k) {
            std::size_t donor = uniform_index(rng, meta.size() - 1);
            if (donor >= j) ++donor;
            Index r;
            if (with_replacement) {
                r = static_cast<Index>(uniform_index(rng, static_cast<std::size_t>(meta.pools[donor].rows())));
            } else {
                auto& left = remaining[donor];
                if (left.empty()) throw SamplingError("task: donor distribution exhausted");
                const std::size_t pick = uniform_index(rng, left.size());
                r = left[pick];
                left[pick] = left.back();
                left.pop_back();
            }
            const Index dst = order[static_cast<std::size_t>(slot++)];
            task.x.row(dst) = meta.pools[donor].row(r);
            task.y[dst] = 1.0;
        }
    }
    return task;
}

/// Contaminated training task: round(pi * B) rows of P_j plus B - round(pi * B) rows of the
/// equally weighted complement.
inline TaskBatch build_contaminated_task(const MetaDataset& meta, std::size_t j, const MixtureConfig& cfg, Rng& rng) {
    cfg.validate();
    const Index n_normal = cfg.normal_count();
    const Index n_anomalous = cfg.batch_size - n_normal;
    if (n_anomalous > 0 && meta.size() < 2)
        throw ConfigError("task: pi < 1 requires at least 2 distributions (complement is empty)");
    return build_task(meta, j, n_normal, n_anomalous, cfg.with_replacement, rng);
}

/// M independent tasks; each source drawn uniformly with replacement.
inline std::vector<TaskBatch> sample_iteration_tasks(const MetaDataset& meta, const MixtureConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<TaskBatch> tasks;
    tasks.reserve(cfg.tasks_per_iteration);
    for (std::size_t m = 0; m < cfg.tasks_per_iteration; ++m) {
        const std::size_t j = uniform_index(rng, meta.size());
        tasks.push_back(build_contaminated_task(meta, j, cfg, rng));
    }
    return tasks;
}

/// Hoeffding bound on the probability that a batch of B i.i.d. draws with anomaly fraction p
/// has an anomaly majority: exp(-2 B (1/2 - p)^2).
inline double hoeffding_violation_bound(std::size_t batch_size, double p) {
    if (!(p >= 0.0 && p <= 0.5))
        throw DomainError("hoeffding_violation_bound: anomaly fraction must lie in [0, 0.5], got " + std::to_string(p));
    const double gap = 0.5 - p;
    return std::exp(-2.0 * static_cast<double>(batch_size) * gap * gap);
}

/// True iff `perm` is a bijection on [0, n).
inline bool is_permutation_of(const std::vector<Index>& perm, Index n) {
    if (static_cast<Index>(perm.size()) != n) return false;
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (Index p : perm) {
        if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) return false;
        seen[static_cast<std::size_t>(p)] = true;
    }
    return true;
}

/// Column k of the result is column perm[k] of `x`.
inline MatrixD permute_attributes(const MatrixD& x, const std::vector<Index>& perm) {
    if (!is_permutation_of(perm, x.cols()))
        throw ValidationError("permute_attributes: not a permutation of " + std::to_string(x.cols()) + " columns");
    MatrixD out(x.rows(), x.cols());
    for (Index k = 0; k < x.cols(); ++k) out.col(k) = x.col(perm[static_cast<std::size_t>(k)]);
    return out;
}

inline std::vector<Index> inverse_permutation(const std::vector<Index>& perm) {
    std::vector<Index> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<Index>(k);
    return inv;
}

}  // namespace acr
