#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rsb/dataio.hpp"
#include "rsb/evaluation.hpp"
#include "rsb/model.hpp"
#include "rsb/synthetic.hpp"
#include "rsb/trainer.hpp"

// Experiment orchestration: a flat JSON config describes dataset, network,
// training and an optional hyperparameter grid; list-valued entries for the
// sweepable keys expand into a Cartesian grid scored by the factual-data
// selection metric. Everything downstream of the config seed is
// deterministic, including the report files.
namespace rsb::cli {

struct ExperimentConfig {
    // "synthetic" or a file glob / directory of canonical realization files
    std::string dataset = "synthetic";
    SyntheticConfig synthetic;

    Normalizer::Kind normalizer = Normalizer::Kind::min_max;
    bool standardize_outcomes = true;

    std::uint64_t seed = 0;
    // true when the config pinned synthetic.seed explicitly; otherwise it is
    // re-derived whenever the experiment seed changes
    bool synthetic_seed_pinned = false;
    // half-open range of realization indices; end == 0 means "whole dataset"
    std::size_t realization_begin = 0;
    std::size_t realization_end = 0;
    // 0 resolves to 50 for synthetic data, 10 for file datasets
    std::size_t tuning_realizations = 0;

    std::string out_dir;
    std::string baseline_report;  // another run's realizations.jsonl, optional

    // network; rep dims left unset split the encoder output 25/75
    std::vector<std::size_t> encoder_layers = {200, 200, 200};
    std::optional<std::size_t> rep_dim_a;
    std::optional<std::size_t> rep_dim_bc;
    std::vector<std::size_t> decoder_layers = {};
    std::vector<std::size_t> head_layers = {100, 100, 100};
    ActivationKind activation = ActivationKind::elu;
    double init_gain = 0.1;

    TrainConfig train;

    // sweepable key -> list of candidate values (absent key: not swept)
    std::map<std::string, std::vector<nlohmann::json>> sweep;
};

/// Parses and validates the flat JSON config document. Unknown keys are
/// rejected so typos fail fast. Throws ParseError / ConfigError.
ExperimentConfig load_experiment_config(const std::string& path);

/// Every default applied; identical to loading an empty document.
ExperimentConfig default_experiment_config();

/// The fully resolved configuration as a canonical document (sorted keys,
/// shortest-round-trip numbers); reruns echo identical bytes.
nlohmann::json resolved_config_json(const ExperimentConfig& cfg);

/// Command-line overrides on top of a loaded config. A new seed re-derives
/// the synthetic data stream unless the config pinned it; empty / nullopt
/// arguments leave the config untouched.
void apply_overrides(ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed,
                     const std::string& out_dir,
                     const std::optional<std::pair<std::size_t, std::size_t>>& realizations);

// One cell of the hyperparameter grid: the swept keys with concrete values.
struct GridPoint {
    std::size_t index = 0;
    std::map<std::string, nlohmann::json> values;
};

/// Cartesian product over the sweep lists (grid of size 1 when nothing is
/// swept). Every point is validated against the network/train constraints
/// before any training starts.
std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg);

/// Network and train configs with one grid point applied.
NetworkConfig network_for(const ExperimentConfig& cfg, const GridPoint& point,
                          std::size_t input_dim);
TrainConfig train_config_for(const ExperimentConfig& cfg, const GridPoint& point);

// Uniform access to synthetic and file-backed datasets; load(h) materializes
// realization h on demand so large ranges never sit in memory at once.
struct Dataset {
    std::size_t n_realizations = 0;
    std::size_t n_samples = 0;
    std::size_t feature_dim = 0;
    bool is_synthetic = false;
    std::function<Realization(std::size_t)> load;
};

Dataset open_dataset(const ExperimentConfig& cfg);

/// Pins the half-open realization range against an open dataset (end == 0
/// selects everything) and checks it fits. Throws ConfigError.
void resolve_range(ExperimentConfig& cfg, const Dataset& data);

/// Sweep subset size: explicit config value, else 50 for synthetic and 10
/// for file datasets, clamped to the realization range.
std::size_t resolved_tuning_count(const ExperimentConfig& cfg);

/// fn(i) for i in [0, n) spread across `workers` threads (serial when 1);
/// the first job exception is rethrown after every worker has finished.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

/// Shell-style filename expansion for the dataset field: '*' and '?' in the
/// final path component; a bare directory means every .csv inside. Sorted.
std::vector<std::string> expand_dataset_glob(const std::string& pattern);

// Per-job seeds, all derived from the experiment seed through distinct
// streams so data generation, splits, initialization and batching never
// share state.
std::uint64_t split_seed(std::uint64_t seed, std::size_t realization);
std::uint64_t net_seed(std::uint64_t seed, std::size_t grid, std::size_t realization);
std::uint64_t train_seed(std::uint64_t seed, std::size_t grid, std::size_t realization);

// One realization made ready for training: split, fitted transforms, and
// the normalized/standardized train and validation tensors.
struct PreparedRealization {
    Realization r;
    SplitSpec split;
    Normalizer nz;
    OutcomeScaler scaler;
    SplitData train_scaled;
    SplitData valid_scaled;
};

PreparedRealization prepare_realization(const ExperimentConfig& cfg, const Dataset& data,
                                        std::size_t realization);

// Records mirrored one-to-one into the JSONL report files. Every number is
// traceable to its (seed, realization, grid point) triple.
struct SweepRecord {
    std::size_t grid_point = 0;
    std::size_t realization = 0;
    std::uint64_t train_seed = 0;
    double selection_sqrt_pehe_nn = 0.0;
    double best_valid_objective = 0.0;
    std::size_t iterations = 0;
};

struct RealizationRecord {
    std::size_t realization = 0;
    std::size_t grid_point = 0;
    std::uint64_t train_seed = 0;
    TrainResult training;
    EvalReport within;
    EvalReport out;
};

nlohmann::json to_json(const SweepRecord& rec);
nlohmann::json to_json(const RealizationRecord& rec);

/// Trains one job and scores it with the selection metric (validation rows,
/// factual data only).
SweepRecord run_sweep_job(const ExperimentConfig& cfg, const Dataset& data,
                          const GridPoint& point, std::size_t realization);

/// Trains one job and evaluates both scopes. When `checkpoint_out` is
/// non-null the trained network's document is stored there.
RealizationRecord run_final_job(const ExperimentConfig& cfg, const Dataset& data,
                                const GridPoint& point, std::size_t realization,
                                std::string* checkpoint_out = nullptr,
                                std::vector<HistoryRecord>* history_out = nullptr);

/// Mean selection score per grid point over the tuning subset; returns the
/// records plus the winning point (lowest mean, ties to the lowest index).
struct SweepOutcome {
    std::vector<SweepRecord> records;
    std::vector<double> mean_by_point;
    std::size_t best_point = 0;
};

SweepOutcome run_sweep(const ExperimentConfig& cfg, const Dataset& data,
                       const std::vector<GridPoint>& grid, std::size_t workers);

/// Writes sweep.jsonl and selection.json for a finished sweep.
void write_sweep_reports(const std::string& out_dir, const ExperimentConfig& cfg,
                         const std::vector<GridPoint>& grid, const SweepOutcome& outcome);

std::vector<RealizationRecord> run_final(const ExperimentConfig& cfg, const Dataset& data,
                                         const GridPoint& point, std::size_t workers);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Aggregate document over per-realization records: metric summaries per
/// scope plus, when a baseline report is supplied, Welch comparisons on
/// every metric both runs share.
nlohmann::json aggregate_json(const std::vector<RealizationRecord>& records,
                              const GridPoint& point);

/// Per-realization metric columns parsed back out of a realizations.jsonl
/// file, keyed by stable field name.
std::map<std::string, std::vector<double>> metric_columns(const std::string& jsonl_path);

/// Welch verdicts comparing this run's columns against a baseline file.
nlohmann::json welch_against(const std::map<std::string, std::vector<double>>& ours,
                             const std::string& baseline_path);

/// Aggregate document rebuilt from a realizations.jsonl file alone: metric
/// summaries plus the optional baseline Welch block.
nlohmann::json report_from_file(const std::string& jsonl_path,
                                const std::string& baseline_path);

/// One external realization in the headerless numeric layout
/// t, y_factual, y_cfactual, mu0, mu1, x_1 .. x_d (one row per sample),
/// returned in canonical form.
Realization convert_external_file(const std::string& path);

/// Training-history record as a report line (loss terms unweighted).
nlohmann::json history_json(const HistoryRecord& rec);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

/// Full pipeline: echo config, sweep (skipped for a single-point grid),
/// train/evaluate the realization range, write realizations.jsonl and
/// aggregate.json (with the baseline Welch block when configured).
void run_experiment(const ExperimentConfig& cfg, std::size_t workers);

} // namespace rsb::cli
