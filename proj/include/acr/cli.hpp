#pragma once

// Command-line experiment runner. Kept header-only so tests can drive it in-process.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acr/checkpoint.hpp"
#include "acr/config.hpp"
#include "acr/data_io.hpp"
#include "acr/evaluator.hpp"
#include "acr/trainer.hpp"
#include "json.hpp"

#ifndef ACR_VERSION
#define ACR_VERSION "0.0.0"
#endif
#ifndef ACR_GIT_REVISION
#define ACR_GIT_REVISION "unknown"
#endif

namespace acr::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 2;
inline constexpr int exit_runtime = 3;

inline std::string version_string() { return std::string(ACR_VERSION) + "+" + ACR_GIT_REVISION; }

/// Worker threads from ACR_THREADS (default 1). Results do not depend on the value.
inline unsigned threads_from_env() {
    const char* v = std::getenv("ACR_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) throw ConfigError("ACR_THREADS must be an integer in [1, 1024], got '" + std::string(v) + "'");
    return static_cast<unsigned>(n);
}

/// Shortest readable form for table labels; not round-trip exact.
inline std::string short_number(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

inline std::vector<double> parse_ratio_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : detail::split_csv_line(text, ',')) {
        const auto v = detail::parse_double(item);
        if (!v) throw ConfigError("--ratios: cannot parse '" + item + "'");
        out.push_back(*v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result records

inline nlohmann::json cells_to_json(const EvalReport& report) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells) {
        cells.push_back({{"pi_test", c.ratio},
                         {"anomaly_ratio", 1.0 - c.ratio},
                         {"auroc_mean", c.mean},
                         {"auroc_std", c.std},
                         {"per_run", c.per_run}});
    }
    return cells;
}

/// One line of a results file. See docs/results.md for the schema.
inline nlohmann::json make_record(const std::string& command, const ExperimentConfig& cfg, const EvalReport& report,
                                  const std::vector<double>& loss_curve, const nlohmann::json& diagnostics,
                                  double wall_clock_seconds) {
    nlohmann::json r;
    r["schema"] = "acr-result/1";
    r["command"] = command;
    r["version"] = version_string();
    r["config_hash"] = config_hash(cfg);
    r["seed"] = cfg.train.seed;
    r["auroc"] = report.auroc;
    r["cells"] = cells_to_json(report);
    r["loss_curve"] = loss_curve;
    r["diagnostics"] = diagnostics;
    r["wall_clock_seconds"] = wall_clock_seconds;
    r["config"] = config_to_json(cfg);
    return r;
}

inline void append_record(const std::string& path, const nlohmann::json& record) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot open results file '" + path + "' for appending");
    out << record.dump() << '\n';
    if (!out) throw Error("write to '" + path + "' failed");
}

inline nlohmann::json diagnostics_json(const EvalReport& report, const std::optional<TvDiagnostic>& tv,
                                       const std::optional<double> final_loss) {
    nlohmann::json d = nlohmann::json::object();
    if (tv) d["tv"] = {{"latent", tv->latent}, {"raw", tv->raw}};
    if (final_loss) d["final_loss"] = *final_loss;
    if (report.threshold) {
        d["threshold"] = *report.threshold;
        d["confusion"] = {{"tp", report.confusion.tp},
                          {"fp", report.confusion.fp},
                          {"tn", report.confusion.tn},
                          {"fn", report.confusion.fn}};
    }
    return d;
}

// ---------------------------------------------------------------------------
// Commands

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string ratios;
    std::optional<std::size_t> runs;
};

/// Defaults, then the config file (or `base` when given), then command-line overrides.
inline ExperimentConfig resolve_config(const CommonOptions& opt, const nlohmann::json* base = nullptr) {
    ExperimentConfig cfg;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    else if (base != nullptr) apply_config(cfg, *base);
    if (opt.seed) cfg.set_seed(*opt.seed);
    if (!opt.ratios.empty()) cfg.eval.ratios = parse_ratio_list(opt.ratios);
    if (opt.runs) cfg.eval.runs = *opt.runs;
    const unsigned threads = threads_from_env();
    cfg.train.threads = threads;
    cfg.eval.threads = threads;
    cfg.validate();
    return cfg;
}

inline int cmd_gen_data(const CommonOptions& opt, const std::string& preset, std::ostream& out) {
    if (preset != "gaussian8") throw ConfigError("gen-data: unknown preset '" + preset + "' (available: gaussian8)");
    ExperimentConfig cfg = resolve_config(opt);
    if (cfg.data != "gaussian8") throw ConfigError("gen-data: config must use data = \"gaussian8\"");
    const std::uint64_t seed = cfg.resolved_data_seed();
    const auto data = generate_gaussian_metaset(cfg.gaussian, seed);
    const std::filesystem::path dir(opt.out);
    std::filesystem::create_directories(dir);
    const std::string csv = "metaset.csv";
    write_metaset_csv((dir / csv).string(), data.train, data.test);
    std::ofstream meta((dir / "metaset.json").string(), std::ios::binary);
    meta << metaset_metadata(cfg.gaussian, seed, data.train, data.test, csv).dump(2) << '\n';
    if (!meta) throw Error("gen-data: cannot write metadata");
    out << "wrote " << data.train.size() << " training and " << data.test.size() << " test distributions to "
        << opt.out << "\n";
    return exit_ok;
}

inline int cmd_train(const CommonOptions& opt, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opt);
    const auto data = load_data(cfg);
    const auto result = train(data.first, cfg.train);
    save_checkpoint(opt.out, result.model);

    nlohmann::json report;
    report["schema"] = "acr-train-report/1";
    report["version"] = version_string();
    report["config_hash"] = config_hash(cfg);
    report["seed"] = result.report.seed;
    report["iterations"] = result.report.loss_curve.size();
    report["final_loss"] = result.report.final_loss();
    report["loss_curve"] = result.report.loss_curve;
    report["wall_clock_seconds"] = result.report.wall_clock_seconds;
    report["checkpoint"] = std::filesystem::path(opt.out).filename().string();
    report["config"] = config_to_json(cfg);
    std::ofstream rep(opt.out + ".report.json", std::ios::binary);
    rep << report.dump(2) << '\n';
    if (!rep) throw Error("train: cannot write report");
    out << "trained " << result.report.loss_curve.size() << " iterations in " << std::fixed << std::setprecision(1)
        << result.report.wall_clock_seconds << " s, final loss " << std::setprecision(6) << result.report.final_loss()
        << "\n";
    out.unsetf(std::ios::fixed);
    return exit_ok;
}

inline void print_table(std::ostream& out, const std::string& title, const std::vector<std::string>& rows,
                        const std::vector<EvalReport>& reports) {
    out << "## " << title << "\n\n| setting |";
    for (const auto& c : reports.front().cells) {
        out << " " << short_number(100.0 * (1.0 - c.ratio)) << "% anomalies |";
    }
    out << " mean |\n|---|";
    for (std::size_t i = 0; i < reports.front().cells.size(); ++i) out << "---|";
    out << "---|\n" << std::fixed << std::setprecision(3);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << "| " << rows[r] << " |";
        for (const auto& c : reports[r].cells) out << " " << c.mean << " ± " << c.std << " |";
        out << " " << reports[r].auroc << " |\n";
    }
    out << "\n";
    out.unsetf(std::ios::fixed);
    out << std::setprecision(6);
}

/// Zero-shot evaluation on the test distributions plus the train-vs-test TV diagnostic.
struct EvalOutcome {
    EvalReport report;
    TvDiagnostic tv;
};

inline EvalOutcome evaluate_with_diagnostics(const DetectorModel<double>& model, const MetaDataset& train_set,
                                             const MetaDataset& test_set, const ExperimentConfig& cfg) {
    EvalOutcome o;
    o.report = evaluate(model, test_set, cfg.eval);
    o.tv = tv_train_vs_test(model, train_set, test_set, cfg.train.mixture(), 0.9, 40, cfg.eval.seed);
    o.report.tv_estimate = o.tv.latent;
    return o;
}

inline int cmd_eval(const CommonOptions& opt, const std::string& model_path, std::ostream& out) {
    // Without --config the model's training report supplies the configuration.
    nlohmann::json train_report;
    const std::string report_path = model_path + ".report.json";
    if (std::filesystem::exists(report_path)) {
        std::ifstream in(report_path);
        train_report = nlohmann::json::parse(in, nullptr, false);
        if (train_report.is_discarded()) throw ParseError(report_path + ": not valid JSON");
    }
    const nlohmann::json* base =
        train_report.is_object() && train_report.contains("config") ? &train_report["config"] : nullptr;
    const ExperimentConfig cfg = resolve_config(opt, base);

    const auto start = std::chrono::steady_clock::now();
    const auto model = load_checkpoint(model_path);
    const auto data = load_data(cfg);
    const auto o = evaluate_with_diagnostics(model, data.first, data.second, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::vector<double> curve;
    if (train_report.is_object()) curve = train_report.value("loss_curve", std::vector<double>{});
    append_record(opt.out, make_record("eval", cfg, o.report, curve, diagnostics_json(o.report, o.tv, std::nullopt), secs));
    print_table(out, "eval " + model_path, {"test statistics: " + std::string(nn::to_string(model.test_mode))},
                {o.report});
    return exit_ok;
}

// ---------------------------------------------------------------------------
// Ablations

inline const std::vector<std::string>& ablation_suites() {
    static const std::vector<std::string> suites = {"bn-mode", "batch-size", "num-classes",
                                                    "pi",      "loss-variant", "bn-position"};
    return suites;
}

/// One grid point: the label shown in the table and the configuration it runs.
struct AblationRow {
    std::string label;
    ExperimentConfig cfg;
    /// Use only the first `train_classes` training distributions (0 = all).
    std::size_t train_classes = 0;
    /// Rows sharing a training configuration reuse one trained model.
    bool reuse_previous_model = false;
};

inline std::vector<AblationRow> ablation_grid(const std::string& suite, const ExperimentConfig& base) {
    std::vector<AblationRow> rows;
    auto add = [&](std::string label, auto&& edit) {
        AblationRow row{std::move(label), base};
        edit(row);
        rows.push_back(std::move(row));
    };
    if (suite == "bn-mode") {
        add("batch statistics (train and test)", [](AblationRow& r) { r.cfg.train.bn_mode = nn::BnMode::batch_stats; });
        add("frozen training statistics at test", [](AblationRow& r) { r.cfg.train.bn_mode = nn::BnMode::frozen; });
        add("no normalization", [](AblationRow& r) { r.cfg.train.bn_mode = nn::BnMode::identity; });
    } else if (suite == "batch-size") {
        bool first = true;
        for (Index b : {3, 6, 11, 16, 20, 40, 60}) {
            add("B = " + std::to_string(b), [&](AblationRow& r) {
                r.cfg.eval.batch_size = b;
                r.reuse_previous_model = !first;
            });
            first = false;
        }
    } else if (suite == "num-classes") {
        for (std::size_t k : {1u, 2u, 4u, 8u}) {
            add("K = " + std::to_string(k), [&](AblationRow& r) {
                r.train_classes = k;
                // A single distribution has no complement to contaminate with.
                if (k == 1) {
                    r.cfg.train.pi = 1.0;
                    r.label += " (pi = 1)";
                }
            });
        }
    } else if (suite == "pi") {
        for (double pi : {0.6, 0.8, 0.9, 0.95, 0.99})
            add("pi = " + short_number(pi), [&](AblationRow& r) { r.cfg.train.pi = pi; });
    } else if (suite == "loss-variant") {
        add("meta-oe", [](AblationRow& r) { r.cfg.train.loss = LossKind::meta_oe; });
        add("one-class", [](AblationRow& r) { r.cfg.train.loss = LossKind::one_class; });
    } else if (suite == "bn-position") {
        const std::size_t positions = base.train.hidden.size() + 2;
        for (std::size_t p = 0; p < positions; ++p) {
            std::string where = p == 0 ? "input" : p + 1 == positions ? "output" : "hidden " + std::to_string(p);
            add("BN at " + where, [&](AblationRow& r) {
                r.cfg.train.bn_mask.assign(positions, false);
                r.cfg.train.bn_mask[p] = true;
            });
        }
    } else {
        throw ConfigError("unknown ablation suite '" + suite + "'");
    }
    for (auto& r : rows) r.cfg.validate();
    return rows;
}

inline int cmd_ablate(const CommonOptions& opt, const std::string& suite, std::ostream& out) {
    const ExperimentConfig base = resolve_config(opt);
    const auto grid = ablation_grid(suite, base);
    const auto data = load_data(base);

    std::vector<std::string> labels;
    std::vector<EvalReport> reports;
    std::optional<TrainResult> trained;
    for (const auto& row : grid) {
        const auto start = std::chrono::steady_clock::now();
        MetaDataset train_set = data.first;
        if (row.train_classes > 0) {
            if (row.train_classes > train_set.size())
                throw ConfigError("ablate: " + row.label + " needs " + std::to_string(row.train_classes) +
                                  " training distributions, data has " + std::to_string(train_set.size()));
            train_set.pools.resize(row.train_classes);
            train_set.ids.resize(row.train_classes);
        }
        if (!row.reuse_previous_model || !trained) trained = train(train_set, row.cfg.train);
        const auto o = evaluate_with_diagnostics(trained->model, train_set, data.second, row.cfg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        auto record = make_record("ablate", row.cfg, o.report, trained->report.loss_curve,
                                  diagnostics_json(o.report, o.tv, trained->report.final_loss()), secs);
        record["suite"] = suite;
        record["row"] = row.label;
        append_record(opt.out, record);
        labels.push_back(row.label);
        reports.push_back(o.report);
        out << "  " << row.label << ": AUROC " << std::fixed << std::setprecision(3) << o.report.auroc << " ("
            << std::setprecision(1) << secs << " s)\n";
        out.unsetf(std::ios::fixed);
        out.flush();
    }
    out << "\n";
    print_table(out, "ablation: " + suite, labels, reports);
    return exit_ok;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses arguments and runs one subcommand. Errors go to `err`; the return value is the
/// process exit code (0 success, 2 usage or configuration error, 3 runtime failure).
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Zero-shot batch-level anomaly detection with adaptive centered representations", "acr"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    CommonOptions opt;
    std::uint64_t seed_value = 0;
    std::size_t runs_value = 0;
    auto add_common = [&](CLI::App* sub, bool with_eval_flags) {
        sub->add_option("--config", opt.config_path, "Config file (key = value, or .json)")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed_value, "Root seed for data, training and evaluation");
        if (with_eval_flags) {
            sub->add_option("--ratios", opt.ratios, "Comma-separated test normal fractions, e.g. 0.99,0.9");
            sub->add_option("--runs", runs_value, "Independent test runs per cell")->check(CLI::PositiveNumber);
        }
    };

    std::string preset = "gaussian8";
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic meta-set and export it as CSV + JSON");
    add_common(gen, false);
    gen->add_option("--preset", preset, "Generator preset")->check(CLI::IsMember({"gaussian8"}));
    gen->add_option("--out", opt.out, "Output directory")->required();

    auto* trn = app.add_subcommand("train", "Meta-train a detector and write a checkpoint");
    add_common(trn, false);
    trn->add_option("--out", opt.out, "Checkpoint path; the report goes to <out>.report.json")->required();

    std::string model_path;
    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the unseen distributions");
    add_common(evl, true);
    evl->add_option("--model", model_path, "Checkpoint written by train")->required()->check(CLI::ExistingFile);
    evl->add_option("--out", opt.out, "Results file (JSON lines, appended)")->required();

    std::string suite;
    auto* abl = app.add_subcommand("ablate", "Run an ablation grid and print its table");
    add_common(abl, true);
    abl->add_option("--suite", suite, "One of: bn-mode, batch-size, num-classes, pi, loss-variant, bn-position")
        ->required();
    abl->add_option("--out", opt.out, "Results file (JSON lines, appended)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help(e.get_name() == "--help" ? "" : e.get_name());
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::CallForVersion&) {
        out << version_string() << "\n";
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "acr: " << e.what() << "\n";
        return exit_usage;
    }
    for (CLI::App* sub : app.get_subcommands()) {
        if (sub->count("--seed") > 0) opt.seed = seed_value;
        if (sub->get_option_no_throw("--runs") != nullptr && sub->count("--runs") > 0) opt.runs = runs_value;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opt, preset, out);
        if (trn->parsed()) return cmd_train(opt, out);
        if (evl->parsed()) return cmd_eval(opt, model_path, out);
        return cmd_ablate(opt, suite, out);
    } catch (const ConfigError& e) {
        err << "acr: configuration error: " << e.what() << "\n";
        return exit_usage;
    } catch (const ValidationError& e) {
        err << "acr: configuration error: " << e.what() << "\n";
        return exit_usage;
    } catch (const ParseError& e) {
        err << "acr: input error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        err << "acr: error: " << e.what() << "\n";
        return exit_runtime;
    }
}

}  // namespace acr::cli
