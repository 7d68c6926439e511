#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "acr/data_io.hpp"
#include "acr/error.hpp"
#include "acr/evaluator.hpp"
#include "acr/trainer.hpp"
#include "json.hpp"

namespace acr {

/// Everything one experiment needs. Loaded from a flat `key = value` file (see
/// docs/config.md); every key maps to one field and unknown keys are rejected.
struct ExperimentConfig {
    TrainConfig train;
    EvalConfig eval;

    /// "gaussian8": generate the synthetic meta-set; "exported": a directory written by
    /// `acr gen-data`; "csv": a tabular file binned by timestamp.
    std::string data = "gaussian8";
    std::optional<std::uint64_t> data_seed;  // defaults to `seed`
    GaussianMetaSpec gaussian;
    std::string data_path;
    std::string csv_label_column = "label";
    std::string csv_timestamp_column;
    double csv_bin_width = 1.0;
    std::vector<long> csv_test_bins;
    std::string csv_delimiter = ",";
    bool csv_standardize = true;
    std::size_t augment_permutations = 0;

    std::uint64_t resolved_data_seed() const { return data_seed.value_or(train.seed); }

    void set_seed(std::uint64_t seed) {
        train.seed = seed;
        eval.seed = seed;
    }

    void validate() const {
        train.validate();
        eval.validate();
        if (data == "gaussian8") {
            gaussian.validate();
        } else if (data == "exported" || data == "csv") {
            if (data_path.empty()) throw ConfigError("config: data = \"" + data + "\" needs data_path");
            if (data == "csv" && csv_timestamp_column.empty())
                throw ConfigError("config: data = \"csv\" needs csv_timestamp_column to split distributions");
            if (csv_delimiter.size() != 1) throw ConfigError("config: csv_delimiter must be a single character");
        } else {
            throw ConfigError("config: unknown data source '" + data + "' (expected gaussian8, exported or csv)");
        }
    }
};

namespace detail {

inline std::string strip_comment(std::string_view line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return std::string(line.substr(0, i));
    }
    return std::string(line);
}

inline nlohmann::json parse_scalar(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    if (t.empty()) throw ParseError(where + ": missing value");
    if (t.front() == '"') {
        if (t.size() < 2 || t.back() != '"') throw ParseError(where + ": unterminated string");
        return t.substr(1, t.size() - 2);
    }
    if (t == "true") return true;
    if (t == "false") return false;
    const bool integral = t.find_first_of(".eEn") == std::string::npos;
    if (integral) {
        long long v = 0;
        const auto res = std::from_chars(t.data() + (t[0] == '+' ? 1 : 0), t.data() + t.size(), v);
        if (res.ec == std::errc() && res.ptr == t.data() + t.size()) return v;
    }
    if (const auto d = parse_double(t)) return *d;
    // Bare words are accepted as strings.
    for (char c : t)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '/'))
            throw ParseError(where + ": cannot parse value '" + t + "'");
    return t;
}

inline nlohmann::json parse_value(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    if (t.empty() || t.front() != '[') return parse_scalar(t, where);
    if (t.back() != ']') throw ParseError(where + ": unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    const std::string inner = trim(std::string_view(t).substr(1, t.size() - 2));
    if (inner.empty()) return arr;
    for (const auto& item : split_csv_line(inner, ',')) arr.push_back(parse_scalar(item, where));
    return arr;
}

}  // namespace detail

/// Parses `key = value` lines into a JSON object. `#` starts a comment; values are
/// integers, floats, booleans, quoted strings, bare words or flat arrays `[a, b]`.
inline nlohmann::json parse_config_text(std::string_view text, const std::string& origin = "config") {
    nlohmann::json out = nlohmann::json::object();
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string body = detail::trim(detail::strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') throw ParseError(where + ": sections are not supported; use flat keys");
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ParseError(where + ": empty key");
        if (out.contains(key)) throw ParseError(where + ": duplicate key '" + key + "'");
        out[key] = detail::parse_value(body.substr(eq + 1), where);
    }
    return out;
}

namespace detail {

template <typename T>
T get_as(const nlohmann::json& v, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("");
            if constexpr (std::is_unsigned_v<T>)
                if (v.get<long long>() < 0) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': unexpected value " + v.dump());
    }
}

template <typename T>
std::vector<T> get_list(const nlohmann::json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError("config key '" + key + "': expected an array, got " + v.dump());
    std::vector<T> out;
    for (const auto& item : v) out.push_back(get_as<T>(item, key));
    return out;
}

}  // namespace detail

/// Applies every key of `values` onto `cfg`. Unknown keys raise ConfigError naming the key.
inline void apply_config(ExperimentConfig& cfg, const nlohmann::json& values) {
    using detail::get_as;
    using detail::get_list;
    if (!values.is_object()) throw ConfigError("config: expected a key/value object");
    for (const auto& [key, v] : values.items()) {
        auto& t = cfg.train;
        auto& e = cfg.eval;
        auto& g = cfg.gaussian;
        if (key == "seed") cfg.set_seed(get_as<std::uint64_t>(v, key));
        else if (key == "iterations") t.iterations = get_as<std::size_t>(v, key);
        else if (key == "tasks_per_iteration") t.tasks_per_iteration = get_as<std::size_t>(v, key);
        else if (key == "batch_size") t.batch_size = get_as<Index>(v, key);
        else if (key == "pi") t.pi = get_as<double>(v, key);
        else if (key == "learning_rate") t.learning_rate = get_as<double>(v, key);
        else if (key == "head") t.head = parse_head_kind(get_as<std::string>(v, key));
        else if (key == "hidden") t.hidden = get_list<Index>(v, key);
        else if (key == "latent_dim") t.latent_dim = get_as<Index>(v, key);
        else if (key == "bn_mask") t.bn_mask = get_list<bool>(v, key);
        else if (key == "bn_mode") t.bn_mode = nn::parse_bn_mode(get_as<std::string>(v, key));
        else if (key == "loss") t.loss = parse_loss_kind(get_as<std::string>(v, key));
        else if (key == "freeze_center") t.freeze_center = get_as<bool>(v, key);
        else if (key == "inverse_eps") t.inverse_eps = get_as<double>(v, key);
        else if (key == "bn_eps") t.bn_eps = get_as<double>(v, key);
        else if (key == "with_replacement") t.with_replacement = get_as<bool>(v, key);
        else if (key == "eval_ratios") e.ratios = get_list<double>(v, key);
        else if (key == "eval_runs") e.runs = get_as<std::size_t>(v, key);
        else if (key == "eval_batch_size") e.batch_size = get_as<Index>(v, key);
        else if (key == "eval_test_set_size") e.test_set_size = get_as<Index>(v, key);
        else if (key == "eval_threshold") e.threshold = get_as<double>(v, key);
        else if (key == "data") cfg.data = get_as<std::string>(v, key);
        else if (key == "data_seed") cfg.data_seed = get_as<std::uint64_t>(v, key);
        else if (key == "data_dim") g.dim = get_as<Index>(v, key);
        else if (key == "k_train") g.k_train = get_as<std::size_t>(v, key);
        else if (key == "k_test") g.k_test = get_as<std::size_t>(v, key);
        else if (key == "samples_per_distribution") g.samples_per_distribution = get_as<Index>(v, key);
        else if (key == "prior_scale") g.prior_scale = get_as<double>(v, key);
        else if (key == "within_scale") g.within_scale = get_as<double>(v, key);
        else if (key == "data_path") cfg.data_path = get_as<std::string>(v, key);
        else if (key == "csv_label_column") cfg.csv_label_column = get_as<std::string>(v, key);
        else if (key == "csv_timestamp_column") cfg.csv_timestamp_column = get_as<std::string>(v, key);
        else if (key == "csv_bin_width") cfg.csv_bin_width = get_as<double>(v, key);
        else if (key == "csv_test_bins") cfg.csv_test_bins = get_list<long>(v, key);
        else if (key == "csv_delimiter") cfg.csv_delimiter = get_as<std::string>(v, key);
        else if (key == "csv_standardize") cfg.csv_standardize = get_as<bool>(v, key);
        else if (key == "augment_permutations") cfg.augment_permutations = get_as<std::size_t>(v, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

/// Reads a config file. Files ending in `.json` hold the same keys as a JSON object (the
/// form embedded in result records); anything else uses the `key = value` syntax.
inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json values;
    if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0) {
        try {
            values = nlohmann::json::parse(ss.str());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what());
        }
    } else {
        values = parse_config_text(ss.str(), path);
    }
    ExperimentConfig cfg;
    apply_config(cfg, values);
    return cfg;
}

/// The fully resolved configuration, in the same keys load_config accepts.
inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    const auto& t = cfg.train;
    const auto& e = cfg.eval;
    nlohmann::json j;
    j["seed"] = t.seed;
    j["iterations"] = t.iterations;
    j["tasks_per_iteration"] = t.tasks_per_iteration;
    j["batch_size"] = t.batch_size;
    j["pi"] = t.pi;
    j["learning_rate"] = t.learning_rate;
    j["head"] = to_string(t.head);
    j["hidden"] = t.hidden;
    j["latent_dim"] = t.latent_dim;
    if (!t.bn_mask.empty()) j["bn_mask"] = t.bn_mask;
    j["bn_mode"] = nn::to_string(t.bn_mode);
    j["loss"] = to_string(t.loss);
    j["freeze_center"] = t.freeze_center;
    j["inverse_eps"] = t.inverse_eps;
    j["bn_eps"] = t.bn_eps;
    j["with_replacement"] = t.with_replacement;
    j["eval_ratios"] = e.ratios;
    j["eval_runs"] = e.runs;
    j["eval_batch_size"] = e.batch_size;
    j["eval_test_set_size"] = e.test_set_size;
    if (e.threshold) j["eval_threshold"] = *e.threshold;
    j["data"] = cfg.data;
    j["data_seed"] = cfg.resolved_data_seed();
    if (cfg.data == "gaussian8") {
        j["data_dim"] = cfg.gaussian.dim;
        j["k_train"] = cfg.gaussian.k_train;
        j["k_test"] = cfg.gaussian.k_test;
        j["samples_per_distribution"] = cfg.gaussian.samples_per_distribution;
        j["prior_scale"] = cfg.gaussian.prior_scale;
        j["within_scale"] = cfg.gaussian.within_scale;
    } else {
        j["data_path"] = cfg.data_path;
    }
    if (cfg.data == "csv") {
        j["csv_label_column"] = cfg.csv_label_column;
        j["csv_timestamp_column"] = cfg.csv_timestamp_column;
        j["csv_bin_width"] = cfg.csv_bin_width;
        j["csv_test_bins"] = cfg.csv_test_bins;
        j["csv_delimiter"] = cfg.csv_delimiter;
        j["csv_standardize"] = cfg.csv_standardize;
    }
    j["augment_permutations"] = cfg.augment_permutations;
    return j;
}

/// 16 hex digits of FNV-1a over the canonical (sorted-key) JSON of the config.
inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Train and test meta-sets described by the config's data keys.
inline std::pair<MetaDataset, MetaDataset> load_data(const ExperimentConfig& cfg) {
    MetaDataset train, test;
    if (cfg.data == "gaussian8") {
        auto gen = generate_gaussian_metaset(cfg.gaussian, cfg.resolved_data_seed());
        train = std::move(gen.train);
        test = std::move(gen.test);
    } else if (cfg.data == "exported") {
        auto loaded = load_exported_metaset(cfg.data_path);
        train = std::move(loaded.train);
        test = std::move(loaded.test);
    } else {
        TabularSource src;
        src.path = cfg.data_path;
        src.label_column = cfg.csv_label_column;
        src.timestamp_column = cfg.csv_timestamp_column;
        src.bin_width = cfg.csv_bin_width;
        src.test_bins.insert(cfg.csv_test_bins.begin(), cfg.csv_test_bins.end());
        src.standardize = cfg.csv_standardize;
        src.delimiter = cfg.csv_delimiter.at(0);
        auto loaded = load_tabular(src);
        train = std::move(loaded.train);
        test = std::move(loaded.test);
    }
    if (cfg.augment_permutations > 0)
        train = augment_with_permutations(train, cfg.augment_permutations, cfg.resolved_data_seed());
    return {std::move(train), std::move(test)};
}

}  // namespace acr
