#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "acr/error.hpp"
#include "acr/meta_tasks.hpp"
#include "acr/nn/tensor.hpp"
#include "acr/rng.hpp"
#include "json.hpp"

namespace acr {

// ---------------------------------------------------------------------------
// Synthetic meta-distribution

/// Family of isotropic Gaussians. Each distribution k is N(mu_k, within_scale^2 I) with
/// mu_k ~ N(0, prior_scale^2 I). The first `k_train` distributions form the training
/// meta-set; the remaining `k_test` are held out.
struct GaussianMetaSpec {
    Index dim = 8;
    std::size_t k_train = 8;
    std::size_t k_test = 4;
    Index samples_per_distribution = 2000;
    double prior_scale = 8.0;
    double within_scale = 1.0;

    void validate() const {
        if (dim < 1) throw ConfigError("gaussian spec: dim must be positive");
        if (k_train < 2) throw ConfigError("gaussian spec: need at least 2 training distributions");
        if (k_test < 1) throw ConfigError("gaussian spec: need at least 1 test distribution");
        if (samples_per_distribution < 1) throw ConfigError("gaussian spec: samples_per_distribution must be positive");
        if (!(within_scale >= 0.0)) throw ConfigError("gaussian spec: within_scale must be non-negative");
        if (!(prior_scale > within_scale))
            throw ConfigError("gaussian spec: prior_scale must exceed within_scale so distributions differ");
    }

    std::size_t k_total() const { return k_train + k_test; }

    /// The default desk-scale preset.
    static GaussianMetaSpec gaussian8() { return {}; }
};

struct GeneratedMetaSet {
    MetaDataset train;
    MetaDataset test;
    std::vector<VectorD> means;  // one per distribution, train first
};

inline GeneratedMetaSet generate_gaussian_metaset(const GaussianMetaSpec& spec, std::uint64_t seed) {
    spec.validate();
    GeneratedMetaSet out;
    Rng mean_rng = make_rng(seed, 0);
    for (std::size_t k = 0; k < spec.k_total(); ++k) {
        VectorD mu(spec.dim);
        for (Index i = 0; i < spec.dim; ++i) mu[i] = spec.prior_scale * standard_normal(mean_rng);
        out.means.push_back(std::move(mu));
    }
    for (std::size_t k = 0; k < spec.k_total(); ++k) {
        Rng rng = make_rng(seed, 1 + k);
        MatrixD pool(spec.samples_per_distribution, spec.dim);
        for (Index r = 0; r < pool.rows(); ++r)
            for (Index i = 0; i < spec.dim; ++i)
                pool(r, i) = out.means[k][i] + spec.within_scale * standard_normal(rng);
        auto& target = k < spec.k_train ? out.train : out.test;
        target.add(std::move(pool), static_cast<int>(k));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation and splits

/// Appends `n_perms` column-permuted copies of every distribution. Each copy draws its own
/// permutation; new ids continue after the largest existing id. The input is not modified.
inline MetaDataset augment_with_permutations(const MetaDataset& meta, std::size_t n_perms, std::uint64_t seed) {
    MetaDataset out = meta;
    if (n_perms == 0 || meta.size() == 0) return out;
    Rng rng = make_rng(seed, 0x9e);
    int next_id = *std::max_element(meta.ids.begin(), meta.ids.end()) + 1;
    const Index d = meta.dim();
    for (std::size_t p = 0; p < n_perms; ++p) {
        for (std::size_t j = 0; j < meta.size(); ++j) {
            std::vector<Index> perm(static_cast<std::size_t>(d));
            std::iota(perm.begin(), perm.end(), Index{0});
            shuffle(perm.begin(), perm.end(), rng);
            out.add(permute_attributes(meta.pools[j], perm), next_id++);
        }
    }
    return out;
}

/// Test meta-set with one normal distribution (class `normal_class`) whose anomaly pool is
/// the union of all other classes.
inline MetaDataset one_vs_rest_split(const std::vector<MatrixD>& labeled_pools, std::size_t normal_class) {
    if (normal_class >= labeled_pools.size())
        throw ConfigError("one_vs_rest_split: class " + std::to_string(normal_class) + " not present (" +
                          std::to_string(labeled_pools.size()) + " classes)");
    if (labeled_pools.size() < 2) throw ConfigError("one_vs_rest_split: need at least two classes");
    const Index d = labeled_pools[normal_class].cols();
    Index rows = 0;
    for (std::size_t c = 0; c < labeled_pools.size(); ++c) {
        if (labeled_pools[c].cols() != d) throw DimensionError("one_vs_rest_split: classes differ in dimension");
        if (c != normal_class) rows += labeled_pools[c].rows();
    }
    MatrixD anomalies(rows, d);
    Index at = 0;
    for (std::size_t c = 0; c < labeled_pools.size(); ++c) {
        if (c == normal_class) continue;
        anomalies.middleRows(at, labeled_pools[c].rows()) = labeled_pools[c];
        at += labeled_pools[c].rows();
    }
    MetaDataset out;
    out.pools.push_back(labeled_pools[normal_class]);
    out.ids.push_back(static_cast<int>(normal_class));
    out.anomaly_pools.push_back(std::move(anomalies));
    return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest text that round-trips exactly: 17 significant digits at most.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

/// Per-feature standardization. Zero-variance features keep scale 1.
struct Standardizer {
    VectorD mean;
    VectorD scale;

    static Standardizer fit(const std::vector<const MatrixD*>& parts) {
        Index rows = 0;
        Index d = parts.empty() ? 0 : parts.front()->cols();
        for (const auto* p : parts) rows += p->rows();
        if (rows == 0) throw ConfigError("standardizer: no training rows to fit on");
        VectorD sum = VectorD::Zero(d);
        for (const auto* p : parts) sum += p->colwise().sum().transpose();
        Standardizer s{sum / static_cast<double>(rows), VectorD::Zero(d)};
        for (const auto* p : parts) s.scale += (p->rowwise() - s.mean.transpose()).array().square().colwise().sum().matrix().transpose();
        s.scale = (s.scale / static_cast<double>(rows)).cwiseSqrt();
        for (Index k = 0; k < d; ++k)
            if (!(s.scale[k] > 0.0)) s.scale[k] = 1.0;
        return s;
    }

    MatrixD apply(const MatrixD& x) const {
        return ((x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
    }
};

/// CSV file describing labeled samples, optionally split into distributions by a timestamp
/// column. Rows of bin b = floor(timestamp / bin_width) form distribution b.
struct TabularSource {
    std::string path;
    std::vector<std::string> feature_columns;  // empty: every column except label and timestamp
    std::string label_column = "label";
    std::optional<std::string> timestamp_column;
    double bin_width = 1.0;
    /// Bins held out for evaluation. Labeled anomalies are kept only in these.
    std::set<long> test_bins;
    bool standardize = true;
    char delimiter = ',';
};

struct TabularMetaSet {
    MetaDataset train;
    MetaDataset test;
    std::vector<std::string> feature_names;
    std::optional<Standardizer> standardizer;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == delim) {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string_view text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    double v = 0.0;
    const char* begin = t.data();
    if (*begin == '+') ++begin;
    const auto res = std::from_chars(begin, t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Reads a CSV into train and test meta-sets. Standardization constants (when enabled) are
/// fitted on the normal rows of training bins only and applied to every row.
inline TabularMetaSet load_tabular(const TabularSource& src) {
    std::ifstream in(src.path);
    if (!in) throw ParseError("load_tabular: cannot open '" + src.path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError(src.path + ": empty file, header row required");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    std::vector<std::string> header = detail::split_csv_line(line, src.delimiter);
    for (auto& h : header) h = detail::trim(h);

    auto column = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ParseError(src.path + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t label_col = column(src.label_column);
    constexpr std::size_t no_column = static_cast<std::size_t>(-1);
    const std::size_t time_col = src.timestamp_column ? column(*src.timestamp_column) : no_column;
    std::vector<std::string> names = src.feature_columns;
    if (names.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (c != label_col && c != time_col) names.push_back(header[c]);
    }
    if (names.empty()) throw ParseError(src.path + ": no feature columns");
    std::vector<std::size_t> feature_cols;
    for (const auto& n : names) feature_cols.push_back(column(n));
    if (src.timestamp_column && !(src.bin_width > 0.0)) throw ConfigError("load_tabular: bin_width must be positive");

    struct Rows {
        std::vector<std::vector<double>> normal, anomalous;
    };
    std::map<long, Rows> bins;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line, src.delimiter);
        const std::string where = src.path + ":" + std::to_string(line_no);
        if (fields.size() != header.size())
            throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        std::vector<double> row;
        for (std::size_t k = 0; k < feature_cols.size(); ++k) {
            const auto v = detail::parse_double(fields[feature_cols[k]]);
            if (!v) throw ParseError(where + ": cannot parse '" + fields[feature_cols[k]] + "' in column '" + names[k] + "'");
            if (!std::isfinite(*v)) throw ParseError(where + ": non-finite value in column '" + names[k] + "'");
            row.push_back(*v);
        }
        const auto label = detail::parse_double(fields[label_col]);
        if (!label || (*label != 0.0 && *label != 1.0))
            throw ParseError(where + ": label must be 0 or 1, got '" + fields[label_col] + "'");
        long bin = 0;
        if (time_col != no_column) {
            const auto ts = detail::parse_double(fields[time_col]);
            if (!ts || !std::isfinite(*ts)) throw ParseError(where + ": cannot parse timestamp '" + fields[time_col] + "'");
            bin = static_cast<long>(std::floor(*ts / src.bin_width));
        }
        auto& dst = bins[bin];
        (*label == 0.0 ? dst.normal : dst.anomalous).push_back(std::move(row));
    }
    if (bins.empty()) throw ParseError(src.path + ": no data rows");
    if (time_col != no_column && bins.size() < 2)
        throw ConfigError(src.path + ": timestamp binning produced a single bin; need at least 2");

    const Index d = static_cast<Index>(feature_cols.size());
    auto to_matrix = [d](const std::vector<std::vector<double>>& rows) {
        MatrixD m(static_cast<Index>(rows.size()), d);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (Index k = 0; k < d; ++k) m(static_cast<Index>(r), k) = rows[r][static_cast<std::size_t>(k)];
        return m;
    };

    TabularMetaSet out;
    out.feature_names = names;
    bool any_test_anomalies = false;
    for (const auto& [bin, rows] : bins) {
        const bool is_test = src.test_bins.count(bin) > 0;
        if (rows.normal.empty()) continue;
        if (is_test) {
            out.test.add(to_matrix(rows.normal), static_cast<int>(bin));
            any_test_anomalies = any_test_anomalies || !rows.anomalous.empty();
        } else {
            out.train.add(to_matrix(rows.normal), static_cast<int>(bin));
        }
    }
    for (long b : src.test_bins)
        if (!bins.count(b)) throw ConfigError(src.path + ": test bin " + std::to_string(b) + " has no rows");
    if (any_test_anomalies) {
        for (int id : out.test.ids) out.test.anomaly_pools.push_back(to_matrix(bins.at(id).anomalous));
    }

    if (src.standardize) {
        std::vector<const MatrixD*> parts;
        for (const auto& p : out.train.pools) parts.push_back(&p);
        out.standardizer = Standardizer::fit(parts);
        for (auto& p : out.train.pools) p = out.standardizer->apply(p);
        for (auto& p : out.test.pools) p = out.standardizer->apply(p);
        for (auto& p : out.test.anomaly_pools)
            if (p.rows() > 0) p = out.standardizer->apply(p);
    }
    return out;
}

/// Writes train and test distributions as one CSV with columns f0..f{d-1}, label, bin,
/// where bin is the distribution id. Anomaly pools are written with label 1.
inline void write_metaset_csv(const std::string& path, const MetaDataset& train, const MetaDataset& test) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("write_metaset_csv: cannot open '" + path + "' for writing");
    const Index d = train.size() > 0 ? train.dim() : test.dim();
    for (Index k = 0; k < d; ++k) out << 'f' << k << ',';
    out << "label,bin\n";
    auto dump = [&](const MatrixD& m, int label, int bin) {
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index k = 0; k < d; ++k) out << format_double(m(r, k)) << ',';
            out << label << ',' << bin << '\n';
        }
    };
    for (const MetaDataset* meta : {&train, &test}) {
        for (std::size_t j = 0; j < meta->size(); ++j) {
            dump(meta->pools[j], 0, meta->ids[j]);
            if (meta->has_anomaly_pool(j)) dump(meta->anomaly_pools[j], 1, meta->ids[j]);
        }
    }
    if (!out) throw ParseError("write_metaset_csv: write to '" + path + "' failed");
}

/// Sidecar metadata for an exported meta-set.
inline nlohmann::json metaset_metadata(const GaussianMetaSpec& spec, std::uint64_t seed, const MetaDataset& train,
                                       const MetaDataset& test, const std::string& csv_name) {
    nlohmann::json j;
    j["format"] = "acr-metaset";
    j["version"] = 1;
    j["csv"] = csv_name;
    j["dim"] = spec.dim;
    j["k_train"] = train.size();
    j["k_test"] = test.size();
    j["seed"] = seed;
    j["generator"] = {{"kind", "gaussian"},
                      {"prior_scale", spec.prior_scale},
                      {"within_scale", spec.within_scale},
                      {"samples_per_distribution", spec.samples_per_distribution}};
    j["bins"] = {{"train", train.ids}, {"test", test.ids}};
    j["columns"] = {{"label", "label"}, {"timestamp", "bin"}, {"bin_width", 1}};
    return j;
}

/// Reloads a meta-set written by write_metaset_csv + metaset_metadata, unstandardized.
inline TabularMetaSet load_exported_metaset(const std::string& dir) {
    std::ifstream meta_in(dir + "/metaset.json");
    if (!meta_in) throw ParseError("cannot open '" + dir + "/metaset.json'");
    nlohmann::json j;
    try {
        meta_in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir + "/metaset.json: " + e.what());
    }
    TabularSource src;
    src.path = dir + "/" + j.value("csv", std::string("metaset.csv"));
    src.timestamp_column = "bin";
    src.standardize = false;
    for (long b : j.at("bins").at("test").get<std::vector<long>>()) src.test_bins.insert(b);
    return load_tabular(src);
}

}  // namespace acr
