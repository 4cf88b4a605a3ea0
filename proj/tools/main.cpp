#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "rsb/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rsb;
using namespace rsb::cli;

namespace {

std::size_t parse_positive(const std::string& text, const std::string& what) {
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError(what + " must be a non-negative integer, got '" + text + "'");
    }
    return value;
}

// "A..B" (end exclusive) or a bare index "A" meaning [A, A+1).
std::optional<std::pair<std::size_t, std::size_t>> parse_range(const std::string& text) {
    if (text.empty()) {
        return std::nullopt;
    }
    const std::size_t dots = text.find("..");
    if (dots == std::string::npos) {
        const std::size_t h = parse_positive(text, "--realizations");
        return std::make_pair(h, h + 1);
    }
    const std::size_t begin = parse_positive(text.substr(0, dots), "--realizations");
    const std::size_t end = parse_positive(text.substr(dots + 2), "--realizations");
    if (end != 0 && begin >= end) {
        throw ConfigError("--realizations range '" + text + "' is empty");
    }
    return std::make_pair(begin, end);
}

std::size_t resolve_workers(const CLI::Option* opt, std::size_t flag_value) {
    if (opt->count() > 0) {
        if (flag_value == 0) {
            throw ConfigError("--workers must be at least 1");
        }
        return flag_value;
    }
    if (const char* env = std::getenv("RSBNET_WORKERS"); env && *env) {
        const std::size_t value = parse_positive(env, "RSBNET_WORKERS");
        if (value == 0) {
            throw ConfigError("RSBNET_WORKERS must be at least 1");
        }
        return value;
    }
    return 1;
}

std::string resolve_out(const std::string& flag_value) {
    if (!flag_value.empty()) {
        return flag_value;
    }
    if (const char* env = std::getenv("RSBNET_OUT"); env && *env) {
        return env;
    }
    return "";  // fall through to the config's "out" key
}

std::string realization_filename(std::size_t h) {
    std::ostringstream name;
    name << "realization_" << std::setw(5) << std::setfill('0') << h << ".csv";
    return name.str();
}

void require_out_dir(const ExperimentConfig& cfg) {
    if (cfg.out_dir.empty()) {
        throw ConfigError("no output directory: pass --out, set RSBNET_OUT or the "
                          "'out' config key");
    }
}

// Per-subcommand flag bundle; which flags exist varies by command.
struct CommandOpts {
    std::string config_path;
    std::string out_flag;
    std::string range_flag;
    std::uint64_t seed_value = 0;
    std::size_t workers_value = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* workers_opt = nullptr;

    std::optional<std::uint64_t> seed() const {
        if (seed_opt != nullptr && seed_opt->count() > 0) {
            return seed_value;
        }
        return std::nullopt;
    }

    // Loads the config (or defaults when no --config was given) and applies
    // every override in flag > env > config-key order.
    ExperimentConfig resolve() const {
        ExperimentConfig cfg = config_path.empty() ? default_experiment_config()
                                                   : load_experiment_config(config_path);
        apply_overrides(cfg, seed(), resolve_out(out_flag), parse_range(range_flag));
        return cfg;
    }

    std::size_t workers() const { return resolve_workers(workers_opt, workers_value); }
};

CommandOpts* add_common(CLI::App* cmd, std::vector<std::unique_ptr<CommandOpts>>& store,
                        bool config_required, bool with_workers = true) {
    store.push_back(std::make_unique<CommandOpts>());
    CommandOpts* opts = store.back().get();
    auto* config = cmd->add_option("--config", opts->config_path,
                                   "Experiment config file (flat JSON key/value)");
    config->check(CLI::ExistingFile);
    if (config_required) {
        config->required();
    }
    cmd->add_option("--out", opts->out_flag,
                    "Output directory (overrides RSBNET_OUT and the config)");
    cmd->add_option("--realizations", opts->range_flag,
                    "Realization range A..B (end exclusive) or a single index");
    opts->seed_opt = cmd->add_option("--seed", opts->seed_value,
                                     "Experiment seed (overrides the config)");
    if (with_workers) {
        opts->workers_opt = cmd->add_option(
            "--workers", opts->workers_value,
            "Concurrent jobs (default: RSBNET_WORKERS or 1)");
    }
    return opts;
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each may throw; main maps exceptions to exit codes.
// ---------------------------------------------------------------------------

void cmd_generate(const CommandOpts& opts, bool& config_phase) {
    ExperimentConfig cfg = opts.resolve();
    if (cfg.dataset != "synthetic") {
        throw ConfigError("generate needs a synthetic dataset, got '" + cfg.dataset + "'");
    }
    require_out_dir(cfg);
    const std::size_t workers = opts.workers();
    const Dataset data = open_dataset(cfg);
    resolve_range(cfg, data);
    config_phase = false;

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    const std::size_t begin = cfg.realization_begin;
    const std::size_t count = cfg.realization_end - begin;
    parallel_for(count, workers, [&](std::size_t k) {
        const std::size_t h = begin + k;
        write_realization_file(data.load(h), (out / realization_filename(h)).string());
    });
    std::cout << "wrote " << count << " realization file(s) to " << cfg.out_dir << "\n";
}

void cmd_convert(const std::vector<std::string>& inputs, const std::string& out_flag,
                 bool& config_phase) {
    const std::string out_dir = resolve_out(out_flag);
    if (out_dir.empty()) {
        throw ConfigError("no output directory: pass --out or set RSBNET_OUT");
    }
    config_phase = false;

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Realization r = convert_external_file(inputs[i]);
        write_realization_file(r, (out / realization_filename(i)).string());
    }
    std::cout << "converted " << inputs.size() << " file(s) into " << out_dir << "\n";
}

void cmd_train(const CommandOpts& opts, bool& config_phase) {
    ExperimentConfig cfg = opts.resolve();
    require_out_dir(cfg);
    const Dataset data = open_dataset(cfg);
    resolve_range(cfg, data);
    if (cfg.realization_end - cfg.realization_begin != 1) {
        throw ConfigError("train runs exactly one realization; narrow --realizations");
    }
    const std::vector<GridPoint> grid = expand_grid(cfg);
    if (grid.size() != 1) {
        throw ConfigError("train does not sweep; use the sweep or run subcommands");
    }
    network_for(cfg, grid.front(), data.feature_dim).validate();
    train_config_for(cfg, grid.front()).validate();
    config_phase = false;

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    write_text_file((out / "config.json").string(),
                    resolved_config_json(cfg).dump(2) + "\n");

    std::string checkpoint;
    std::vector<HistoryRecord> history;
    const RealizationRecord rec = run_final_job(cfg, data, grid.front(),
                                                cfg.realization_begin, &checkpoint, &history);

    write_text_file((out / "checkpoint.json").string(), checkpoint);
    std::string history_lines;
    for (const auto& h : history) {
        history_lines += history_json(h).dump();
        history_lines += '\n';
    }
    write_text_file((out / "history.jsonl").string(), history_lines);
    write_text_file((out / "realizations.jsonl").string(), to_json(rec).dump() + "\n");

    std::cout << to_json(rec).dump() << "\n";
}

void cmd_evaluate(const CommandOpts& opts, const std::string& checkpoint_path,
                  bool& config_phase) {
    ExperimentConfig cfg = opts.resolve();
    config_phase = false;

    const RsbNet net = load_checkpoint(checkpoint_path);
    const Dataset data = open_dataset(cfg);
    resolve_range(cfg, data);

    std::string lines;
    for (std::size_t h = cfg.realization_begin; h < cfg.realization_end; ++h) {
        const PreparedRealization prep = prepare_realization(cfg, data, h);
        const OutcomeScaler* scaler = cfg.standardize_outcomes ? &prep.scaler : nullptr;
        const EvalReport within = evaluate_scope(net, prep.r, prep.split, prep.nz, scaler,
                                                 EvalScope::within_sample, h);
        const EvalReport out = evaluate_scope(net, prep.r, prep.split, prep.nz, scaler,
                                              EvalScope::out_of_sample, h);
        json j;
        j["realization"] = h;
        j["checkpoint"] = checkpoint_path;
        j["within_sqrt_pehe_nn"] = within.sqrt_pehe_nn;
        if (within.sqrt_pehe) {
            j["within_sqrt_pehe"] = *within.sqrt_pehe;
            j["within_ate_error"] = *within.ate_error;
        }
        j["out_sqrt_pehe_nn"] = out.sqrt_pehe_nn;
        if (out.sqrt_pehe) {
            j["out_sqrt_pehe"] = *out.sqrt_pehe;
            j["out_ate_error"] = *out.ate_error;
        }
        const std::string line = j.dump();
        std::cout << line << "\n";
        lines += line;
        lines += '\n';
    }
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        write_text_file((fs::path(cfg.out_dir) / "evaluation.jsonl").string(), lines);
    }
}

void cmd_sweep(const CommandOpts& opts, bool& config_phase) {
    ExperimentConfig cfg = opts.resolve();
    require_out_dir(cfg);
    const std::size_t workers = opts.workers();
    const Dataset data = open_dataset(cfg);
    resolve_range(cfg, data);
    const std::vector<GridPoint> grid = expand_grid(cfg);
    for (const auto& point : grid) {
        network_for(cfg, point, data.feature_dim).validate();
        train_config_for(cfg, point).validate();
    }
    config_phase = false;

    fs::create_directories(cfg.out_dir);
    write_text_file((fs::path(cfg.out_dir) / "config.json").string(),
                    resolved_config_json(cfg).dump(2) + "\n");
    const SweepOutcome outcome = run_sweep(cfg, data, grid, workers);
    write_sweep_reports(cfg.out_dir, cfg, grid, outcome);

    std::cout << "best grid point " << outcome.best_point << ": "
              << json(grid[outcome.best_point].values).dump() << "\n";
}

void cmd_report(const std::string& input, const std::string& baseline,
                const std::string& out_flag, bool& config_phase) {
    config_phase = false;
    const json doc = report_from_file(input, baseline);
    std::string out_dir = resolve_out(out_flag);
    if (out_dir.empty()) {
        const fs::path parent = fs::path(input).parent_path();
        out_dir = parent.empty() ? "." : parent.string();
    }
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "aggregate.json").string(), doc.dump(2) + "\n");
    std::cout << doc.dump(2) << "\n";
}

void cmd_run(const CommandOpts& opts, bool& config_phase) {
    ExperimentConfig cfg = opts.resolve();
    const std::size_t workers = opts.workers();
    config_phase = false;
    run_experiment(cfg, workers);
    std::cout << "wrote reports to " << cfg.out_dir << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual-regression experiment driver"};
    app.require_subcommand(1);
    std::vector<std::unique_ptr<CommandOpts>> store;

    CLI::App* generate = app.add_subcommand(
        "generate", "Write synthetic realization files in the canonical format");
    CommandOpts* generate_opts = add_common(generate, store, /*config_required=*/false);

    CLI::App* convert = app.add_subcommand(
        "convert", "Convert headerless t,y_f,y_cf,mu0,mu1,x... files to canonical form");
    std::vector<std::string> convert_inputs;
    std::string convert_out;
    convert->add_option("inputs", convert_inputs, "Input files, numbered in argument order")
        ->required()
        ->check(CLI::ExistingFile);
    convert->add_option("--out", convert_out, "Output directory");

    CLI::App* train_cmd = app.add_subcommand(
        "train", "Train on one realization; writes checkpoint, history and report");
    CommandOpts* train_opts = add_common(train_cmd, store, /*config_required=*/true,
                                         /*with_workers=*/false);

    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "Score a stored checkpoint on a realization range (no training)");
    CommandOpts* evaluate_opts = add_common(evaluate, store, /*config_required=*/true,
                                            /*with_workers=*/false);
    std::string checkpoint_path;
    evaluate->add_option("--checkpoint", checkpoint_path, "Checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);

    CLI::App* sweep = app.add_subcommand(
        "sweep", "Score the hyperparameter grid on the tuning realizations");
    CommandOpts* sweep_opts = add_common(sweep, store, /*config_required=*/true);

    CLI::App* report = app.add_subcommand(
        "report", "Aggregate a realizations.jsonl file, optionally against a baseline");
    std::string report_input;
    std::string report_baseline;
    std::string report_out;
    report->add_option("input", report_input, "Per-realization report file (JSONL)")
        ->required()
        ->check(CLI::ExistingFile);
    report->add_option("--baseline", report_baseline,
                       "Baseline realizations.jsonl for the Welch comparison")
        ->check(CLI::ExistingFile);
    report->add_option("--out", report_out, "Output directory (default: next to input)");

    CLI::App* run = app.add_subcommand(
        "run", "Full pipeline: sweep, then train/evaluate the realization range");
    CommandOpts* run_opts = add_common(run, store, /*config_required=*/true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    // Errors before the config is fully resolved are usage errors (exit 2);
    // anything after that is a runtime failure (exit 1). ConfigError always
    // means exit 2, wherever it surfaces.
    bool config_phase = true;
    try {
        if (generate->parsed()) {
            cmd_generate(*generate_opts, config_phase);
        } else if (convert->parsed()) {
            cmd_convert(convert_inputs, convert_out, config_phase);
        } else if (train_cmd->parsed()) {
            cmd_train(*train_opts, config_phase);
        } else if (evaluate->parsed()) {
            cmd_evaluate(*evaluate_opts, checkpoint_path, config_phase);
        } else if (sweep->parsed()) {
            cmd_sweep(*sweep_opts, config_phase);
        } else if (report->parsed()) {
            cmd_report(report_input, report_baseline, report_out, config_phase);
        } else if (run->parsed()) {
            cmd_run(*run_opts, config_phase);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return config_phase ? 2 : 1;
    }
}
