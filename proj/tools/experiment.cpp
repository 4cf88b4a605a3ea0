#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "rsb/errors.hpp"
#include "rsb/rng.hpp"

namespace rsb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Sub-stream tags; arbitrary distinct constants, doubled through
// derive_seed so they cannot collide with the generator's internal
// per-realization tags.
constexpr std::uint64_t kStreamData = 0x64617461;
constexpr std::uint64_t kStreamSplit = 0x73706c69;
constexpr std::uint64_t kStreamNet = 0x6e657477;
constexpr std::uint64_t kStreamTrain = 0x7472676e;

std::uint64_t job_tag(std::size_t grid, std::size_t realization) {
    return (static_cast<std::uint64_t>(grid) << 32) ^ static_cast<std::uint64_t>(realization);
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

// Wraps the flat document with typed, typo-checked accessors. Every key must
// be consumed exactly once; leftovers fail the parse.
class FlatDoc {
public:
    explicit FlatDoc(json doc) : doc_(std::move(doc)) {
        if (!doc_.is_object()) {
            throw ConfigError("config must be a JSON object");
        }
        for (const auto& [key, value] : doc_.items()) {
            if (value.is_object()) {
                throw ConfigError("config is a flat key/value document; '" + key +
                                  "' must not be an object");
            }
        }
    }

    bool has(const std::string& key) const { return doc_.contains(key); }

    const json* take(const std::string& key) {
        const auto it = doc_.find(key);
        if (it == doc_.end()) {
            return nullptr;
        }
        consumed_.insert(key);
        return &*it;
    }

    void finish() const {
        std::vector<std::string> unknown;
        for (const auto& [key, value] : doc_.items()) {
            (void)value;
            if (!consumed_.count(key)) {
                unknown.push_back(key);
            }
        }
        if (!unknown.empty()) {
            std::string msg = "unknown config key(s):";
            for (const auto& k : unknown) {
                msg += " '" + k + "'";
            }
            throw ConfigError(msg);
        }
    }

private:
    json doc_;
    std::set<std::string> consumed_;
};

std::size_t as_size(const json& v, const std::string& key) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        throw ConfigError("'" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

double as_double(const json& v, const std::string& key) {
    if (!v.is_number()) {
        throw ConfigError("'" + key + "' must be a number");
    }
    return v.get<double>();
}

std::vector<std::size_t> as_size_list(const json& v, const std::string& key) {
    if (!v.is_array()) {
        throw ConfigError("'" + key + "' must be a list of layer widths");
    }
    std::vector<std::size_t> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        out.push_back(as_size(e, key));
    }
    return out;
}

void take_scalar_size(FlatDoc& doc, const std::string& key, std::size_t& dst) {
    if (const json* v = doc.take(key)) {
        dst = as_size(*v, key);
    }
}

void take_scalar_double(FlatDoc& doc, const std::string& key, double& dst) {
    if (const json* v = doc.take(key)) {
        dst = as_double(*v, key);
    }
}

void take_scalar_string(FlatDoc& doc, const std::string& key, std::string& dst) {
    if (const json* v = doc.take(key)) {
        if (!v->is_string()) {
            throw ConfigError("'" + key + "' must be a string");
        }
        dst = v->get<std::string>();
    }
}

void take_scalar_bool(FlatDoc& doc, const std::string& key, bool& dst) {
    if (const json* v = doc.take(key)) {
        if (!v->is_boolean()) {
            throw ConfigError("'" + key + "' must be true or false");
        }
        dst = v->get<bool>();
    }
}

// A number sweeps when given as a list of numbers.
void take_sweep_double(FlatDoc& doc, const std::string& key, double& dst,
                       ExperimentConfig& cfg) {
    const json* v = doc.take(key);
    if (!v) {
        return;
    }
    if (v->is_number()) {
        dst = v->get<double>();
        return;
    }
    if (v->is_array() && !v->empty()) {
        std::vector<json> candidates;
        for (const auto& e : *v) {
            candidates.push_back(json(as_double(e, key)));
        }
        dst = candidates.front().get<double>();
        cfg.sweep[key] = std::move(candidates);
        return;
    }
    throw ConfigError("'" + key + "' must be a number or a non-empty list of numbers");
}

void take_sweep_size(FlatDoc& doc, const std::string& key, std::size_t& dst,
                     ExperimentConfig& cfg) {
    const json* v = doc.take(key);
    if (!v) {
        return;
    }
    if (v->is_number_integer()) {
        dst = as_size(*v, key);
        return;
    }
    if (v->is_array() && !v->empty()) {
        std::vector<json> candidates;
        for (const auto& e : *v) {
            candidates.push_back(json(as_size(e, key)));
        }
        dst = candidates.front().get<std::size_t>();
        cfg.sweep[key] = std::move(candidates);
        return;
    }
    throw ConfigError("'" + key + "' must be an integer or a non-empty list of integers");
}

void take_sweep_size_opt(FlatDoc& doc, const std::string& key,
                         std::optional<std::size_t>& dst, ExperimentConfig& cfg) {
    std::size_t probe = 0;
    const bool present = doc.has(key);
    take_sweep_size(doc, key, probe, cfg);
    if (present) {
        dst = probe;
    }
}

// A widths list sweeps when given as a list of lists.
void take_sweep_widths(FlatDoc& doc, const std::string& key, std::vector<std::size_t>& dst,
                       ExperimentConfig& cfg) {
    const json* v = doc.take(key);
    if (!v) {
        return;
    }
    if (!v->is_array()) {
        throw ConfigError("'" + key + "' must be a list of widths or a list of such lists");
    }
    const bool nested = !v->empty() && v->front().is_array();
    if (!nested) {
        dst = as_size_list(*v, key);
        return;
    }
    std::vector<json> candidates;
    for (const auto& e : *v) {
        candidates.push_back(json(as_size_list(e, key)));
    }
    dst = candidates.front().get<std::vector<std::size_t>>();
    cfg.sweep[key] = std::move(candidates);
}

ExperimentConfig config_from_json(json doc) {
    FlatDoc flat(std::move(doc));
    ExperimentConfig cfg;

    take_scalar_string(flat, "dataset", cfg.dataset);
    if (const json* v = flat.take("seed")) {
        if (!v->is_number_integer() || v->get<long long>() < 0) {
            throw ConfigError("'seed' must be a non-negative integer");
        }
        cfg.seed = v->get<std::uint64_t>();
    }
    take_scalar_string(flat, "out", cfg.out_dir);
    take_scalar_string(flat, "baseline_report", cfg.baseline_report);
    if (const json* v = flat.take("realizations")) {
        if (!v->is_array() || v->size() != 2) {
            throw ConfigError("'realizations' must be [begin, end] with end exclusive");
        }
        cfg.realization_begin = as_size((*v)[0], "realizations");
        cfg.realization_end = as_size((*v)[1], "realizations");
        if (cfg.realization_end != 0 && cfg.realization_begin >= cfg.realization_end) {
            throw ConfigError("'realizations' range is empty");
        }
    }
    take_scalar_size(flat, "tuning_realizations", cfg.tuning_realizations);

    take_scalar_size(flat, "synthetic.d_a", cfg.synthetic.d_a);
    take_scalar_size(flat, "synthetic.d_b", cfg.synthetic.d_b);
    take_scalar_size(flat, "synthetic.d_c", cfg.synthetic.d_c);
    take_scalar_size(flat, "synthetic.n_samples", cfg.synthetic.n_samples);
    take_scalar_size(flat, "synthetic.n_realizations", cfg.synthetic.n_realizations);
    // the covariate table gets its own stream unless pinned explicitly
    cfg.synthetic.seed = derive_seed(cfg.seed, kStreamData);
    if (const json* v = flat.take("synthetic.seed")) {
        cfg.synthetic.seed = v->get<std::uint64_t>();
        cfg.synthetic_seed_pinned = true;
    }

    std::string normalizer_name = normalizer_kind_name(cfg.normalizer);
    take_scalar_string(flat, "data.normalizer", normalizer_name);
    cfg.normalizer = normalizer_kind_from_name(normalizer_name);
    take_scalar_bool(flat, "data.standardize_outcomes", cfg.standardize_outcomes);

    take_sweep_widths(flat, "network.encoder_layers", cfg.encoder_layers, cfg);
    take_sweep_size_opt(flat, "network.rep_dim_a", cfg.rep_dim_a, cfg);
    take_sweep_size_opt(flat, "network.rep_dim_bc", cfg.rep_dim_bc, cfg);
    if (const json* v = flat.take("network.decoder_layers")) {
        cfg.decoder_layers = as_size_list(*v, "network.decoder_layers");
    }
    take_sweep_widths(flat, "network.head_layers", cfg.head_layers, cfg);
    std::string act_name = activation_name(cfg.activation);
    take_scalar_string(flat, "network.activation", act_name);
    cfg.activation = activation_from_name(act_name);
    take_scalar_double(flat, "network.init_gain", cfg.init_gain);

    take_sweep_double(flat, "train.alpha", cfg.train.loss_weights.alpha, cfg);
    take_sweep_double(flat, "train.beta", cfg.train.loss_weights.beta, cfg);
    take_sweep_double(flat, "train.gamma", cfg.train.loss_weights.gamma, cfg);
    take_sweep_double(flat, "train.lambda", cfg.train.loss_weights.lambda, cfg);
    take_sweep_double(flat, "train.learning_rate", cfg.train.adam.learning_rate, cfg);
    take_sweep_size(flat, "train.batch_size", cfg.train.batch_size, cfg);
    take_scalar_size(flat, "train.max_iterations", cfg.train.max_iterations);
    take_scalar_size(flat, "train.eval_interval", cfg.train.eval_interval);
    take_scalar_size(flat, "train.patience", cfg.train.patience);
    std::string ipm_name = ipm_kind_name(cfg.train.ipm_kind);
    take_scalar_string(flat, "train.ipm", ipm_name);
    cfg.train.ipm_kind = ipm_kind_from_name(ipm_name);

    flat.finish();

    if (cfg.dataset.empty()) {
        throw ConfigError("'dataset' must be \"synthetic\" or a file pattern");
    }
    if (cfg.dataset == "synthetic") {
        cfg.synthetic.validate();
    }
    if (cfg.encoder_layers.empty() && !cfg.sweep.count("network.encoder_layers")) {
        throw ConfigError("'network.encoder_layers' must not be empty");
    }
    return cfg;
}

} // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    return config_from_json(std::move(doc));
}

ExperimentConfig default_experiment_config() {
    return config_from_json(json::object());
}

void apply_overrides(ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed,
                     const std::string& out_dir,
                     const std::optional<std::pair<std::size_t, std::size_t>>& realizations) {
    if (seed) {
        cfg.seed = *seed;
        if (!cfg.synthetic_seed_pinned) {
            cfg.synthetic.seed = derive_seed(cfg.seed, kStreamData);
        }
    }
    if (!out_dir.empty()) {
        cfg.out_dir = out_dir;
    }
    if (realizations) {
        if (realizations->second != 0 && realizations->first >= realizations->second) {
            throw ConfigError("realization range is empty");
        }
        cfg.realization_begin = realizations->first;
        cfg.realization_end = realizations->second;
    }
}

nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
    json out;  // object keys serialize sorted, so the echo is byte-stable
    out["dataset"] = cfg.dataset;
    out["seed"] = cfg.seed;
    if (!cfg.out_dir.empty()) {
        out["out"] = cfg.out_dir;
    }
    if (!cfg.baseline_report.empty()) {
        out["baseline_report"] = cfg.baseline_report;
    }
    out["realizations"] = {cfg.realization_begin, cfg.realization_end};
    out["tuning_realizations"] = cfg.tuning_realizations;
    if (cfg.dataset == "synthetic") {
        out["synthetic.d_a"] = cfg.synthetic.d_a;
        out["synthetic.d_b"] = cfg.synthetic.d_b;
        out["synthetic.d_c"] = cfg.synthetic.d_c;
        out["synthetic.n_samples"] = cfg.synthetic.n_samples;
        out["synthetic.n_realizations"] = cfg.synthetic.n_realizations;
        out["synthetic.seed"] = cfg.synthetic.seed;
    }
    out["data.normalizer"] = normalizer_kind_name(cfg.normalizer);
    out["data.standardize_outcomes"] = cfg.standardize_outcomes;

    out["network.encoder_layers"] = cfg.encoder_layers;
    if (cfg.rep_dim_a) {
        out["network.rep_dim_a"] = *cfg.rep_dim_a;
    }
    if (cfg.rep_dim_bc) {
        out["network.rep_dim_bc"] = *cfg.rep_dim_bc;
    }
    out["network.decoder_layers"] = cfg.decoder_layers;
    out["network.head_layers"] = cfg.head_layers;
    out["network.activation"] = activation_name(cfg.activation);
    out["network.init_gain"] = cfg.init_gain;

    out["train.alpha"] = cfg.train.loss_weights.alpha;
    out["train.beta"] = cfg.train.loss_weights.beta;
    out["train.gamma"] = cfg.train.loss_weights.gamma;
    out["train.lambda"] = cfg.train.loss_weights.lambda;
    out["train.learning_rate"] = cfg.train.adam.learning_rate;
    out["train.batch_size"] = cfg.train.batch_size;
    out["train.max_iterations"] = cfg.train.max_iterations;
    out["train.eval_interval"] = cfg.train.eval_interval;
    out["train.patience"] = cfg.train.patience;
    out["train.ipm"] = ipm_kind_name(cfg.train.ipm_kind);

    // swept keys echo their full candidate lists
    for (const auto& [key, values] : cfg.sweep) {
        out[key] = json(values);
    }
    return out;
}

std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg) {
    std::vector<GridPoint> grid;
    if (cfg.sweep.empty()) {
        grid.push_back(GridPoint{});
        return grid;
    }
    for (const auto& [key, values] : cfg.sweep) {
        if (values.empty()) {
            throw ConfigError("sweep list for '" + key + "' is empty");
        }
    }
    // row-major over keys in sorted order: the first key varies slowest
    std::vector<std::size_t> counter(cfg.sweep.size(), 0);
    for (;;) {
        GridPoint point;
        point.index = grid.size();
        std::size_t k = 0;
        for (const auto& [key, values] : cfg.sweep) {
            point.values[key] = values[counter[k]];
            ++k;
        }
        grid.push_back(std::move(point));

        std::size_t pos = counter.size();
        while (pos-- > 0) {
            auto it = cfg.sweep.begin();
            std::advance(it, pos);
            if (++counter[pos] < it->second.size()) {
                break;
            }
            counter[pos] = 0;
            if (pos == 0) {
                return grid;
            }
        }
    }
}

NetworkConfig network_for(const ExperimentConfig& cfg, const GridPoint& point,
                          std::size_t input_dim) {
    std::vector<std::size_t> encoder = cfg.encoder_layers;
    std::vector<std::size_t> heads = cfg.head_layers;
    std::optional<std::size_t> a = cfg.rep_dim_a;
    std::optional<std::size_t> bc = cfg.rep_dim_bc;
    for (const auto& [key, value] : point.values) {
        if (key == "network.encoder_layers") {
            encoder = value.get<std::vector<std::size_t>>();
        } else if (key == "network.head_layers") {
            heads = value.get<std::vector<std::size_t>>();
        } else if (key == "network.rep_dim_a") {
            a = value.get<std::size_t>();
        } else if (key == "network.rep_dim_bc") {
            bc = value.get<std::size_t>();
        }
    }
    if (encoder.empty()) {
        throw ConfigError("encoder layer list is empty");
    }
    const std::size_t width = encoder.back();
    if (a && bc) {
        if (*a + *bc != width) {
            throw ConfigError("rep_dim_a + rep_dim_bc = " + std::to_string(*a + *bc) +
                              " does not match the encoder output width " +
                              std::to_string(width));
        }
    } else if (a) {
        if (*a >= width) {
            throw ConfigError("rep_dim_a must be smaller than the encoder output width");
        }
        bc = width - *a;
    } else if (bc) {
        if (*bc >= width) {
            throw ConfigError("rep_dim_bc must be smaller than the encoder output width");
        }
        a = width - *bc;
    } else {
        // default split mirrors the 50/150 of the reference architecture
        std::size_t quarter = static_cast<std::size_t>(
            std::llround(0.25 * static_cast<double>(width)));
        quarter = std::clamp<std::size_t>(quarter, 1, width - 1);
        a = quarter;
        bc = width - quarter;
    }

    NetworkConfig net;
    net.input_dim = input_dim;
    net.encoder_layers = encoder;
    net.rep_dim_a = *a;
    net.rep_dim_bc = *bc;
    net.decoder_layers = cfg.decoder_layers;
    net.head_layers = heads;
    net.activation = cfg.activation;
    net.init_gain = cfg.init_gain;
    return net;
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const GridPoint& point) {
    TrainConfig train = cfg.train;
    for (const auto& [key, value] : point.values) {
        if (key == "train.alpha") {
            train.loss_weights.alpha = value.get<double>();
        } else if (key == "train.beta") {
            train.loss_weights.beta = value.get<double>();
        } else if (key == "train.gamma") {
            train.loss_weights.gamma = value.get<double>();
        } else if (key == "train.lambda") {
            train.loss_weights.lambda = value.get<double>();
        } else if (key == "train.learning_rate") {
            train.adam.learning_rate = value.get<double>();
        } else if (key == "train.batch_size") {
            train.batch_size = value.get<std::size_t>();
        }
    }
    return train;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

namespace {

bool glob_match(std::string_view pat, std::string_view str) {
    std::size_t p = 0;
    std::size_t s = 0;
    std::size_t star = std::string_view::npos;
    std::size_t mark = 0;
    while (s < str.size()) {
        if (p < pat.size() && (pat[p] == '?' || pat[p] == str[s])) {
            ++p;
            ++s;
        } else if (p < pat.size() && pat[p] == '*') {
            star = p++;
            mark = s;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            s = ++mark;
        } else {
            return false;
        }
    }
    while (p < pat.size() && pat[p] == '*') {
        ++p;
    }
    return p == pat.size();
}

} // namespace

std::vector<std::string> expand_dataset_glob(const std::string& pattern) {
    std::error_code ec;
    if (fs::is_directory(pattern, ec)) {
        return expand_dataset_glob((fs::path(pattern) / "*.csv").string());
    }
    if (fs::is_regular_file(pattern, ec)) {
        return {pattern};
    }

    const fs::path full(pattern);
    const fs::path dir = full.parent_path().empty() ? fs::path(".") : full.parent_path();
    const std::string leaf = full.filename().string();
    if (!fs::is_directory(dir, ec)) {
        throw ConfigError("dataset directory '" + dir.string() + "' does not exist");
    }
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && glob_match(leaf, entry.path().filename().string())) {
            paths.push_back(entry.path().string());
        }
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        throw ConfigError("dataset pattern '" + pattern + "' matches no files");
    }
    return paths;
}

Dataset open_dataset(const ExperimentConfig& cfg) {
    Dataset data;
    if (cfg.dataset == "synthetic") {
        cfg.synthetic.validate();
        auto base = std::make_shared<SyntheticBase>(generate_base(cfg.synthetic));
        const SyntheticConfig synth = cfg.synthetic;
        data.is_synthetic = true;
        data.n_realizations = synth.n_realizations;
        data.n_samples = synth.n_samples;
        data.feature_dim = synth.input_dim();
        data.load = [synth, base](std::size_t h) {
            return generate_realization(synth, *base, h);
        };
        return data;
    }
    auto paths = std::make_shared<std::vector<std::string>>(expand_dataset_glob(cfg.dataset));
    const Realization first = read_realization_file(paths->front());
    data.is_synthetic = false;
    data.n_realizations = paths->size();
    data.n_samples = first.size();
    data.feature_dim = first.x.cols();
    data.load = [paths](std::size_t h) { return read_realization_file((*paths)[h]); };
    return data;
}

void resolve_range(ExperimentConfig& cfg, const Dataset& data) {
    if (cfg.realization_end == 0) {
        cfg.realization_end = data.n_realizations;
    }
    if (cfg.realization_begin >= cfg.realization_end) {
        throw ConfigError("realization range is empty");
    }
    if (cfg.realization_end > data.n_realizations) {
        throw ConfigError("realization range [" + std::to_string(cfg.realization_begin) +
                          ", " + std::to_string(cfg.realization_end) +
                          ") exceeds the dataset (" + std::to_string(data.n_realizations) +
                          " realizations)");
    }
}

std::size_t resolved_tuning_count(const ExperimentConfig& cfg) {
    std::size_t count = cfg.tuning_realizations;
    if (count == 0) {
        count = cfg.dataset == "synthetic" ? 50 : 10;
    }
    return std::min(count, cfg.realization_end - cfg.realization_begin);
}

std::uint64_t split_seed(std::uint64_t seed, std::size_t realization) {
    return derive_seed(derive_seed(seed, kStreamSplit), realization);
}

std::uint64_t net_seed(std::uint64_t seed, std::size_t grid, std::size_t realization) {
    return derive_seed(derive_seed(seed, kStreamNet), job_tag(grid, realization));
}

std::uint64_t train_seed(std::uint64_t seed, std::size_t grid, std::size_t realization) {
    return derive_seed(derive_seed(seed, kStreamTrain), job_tag(grid, realization));
}

PreparedRealization prepare_realization(const ExperimentConfig& cfg, const Dataset& data,
                                        std::size_t realization) {
    PreparedRealization prep;
    prep.r = data.load(realization);
    prep.split = split(prep.r.size(), split_seed(cfg.seed, realization));

    const SplitData train_raw = gather_split(prep.r, prep.split.train_idx);
    const SplitData valid_raw = gather_split(prep.r, prep.split.valid_idx);
    prep.nz = Normalizer::fit(train_raw.x, cfg.normalizer);
    prep.scaler =
        cfg.standardize_outcomes ? OutcomeScaler::fit(train_raw.y_f) : OutcomeScaler{};

    auto scale = [&](const SplitData& raw) {
        SplitData out;
        out.x = prep.nz.apply(raw.x);
        out.t = raw.t;
        out.y_f.reserve(raw.y_f.size());
        for (double y : raw.y_f) {
            out.y_f.push_back(prep.scaler.transform(y));
        }
        // counterfactual columns stay out of the training path
        return out;
    };
    prep.train_scaled = scale(train_raw);
    prep.valid_scaled = scale(valid_raw);
    return prep;
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

SweepRecord run_sweep_job(const ExperimentConfig& cfg, const Dataset& data,
                          const GridPoint& point, std::size_t realization) {
    const PreparedRealization prep = prepare_realization(cfg, data, realization);
    const NetworkConfig ncfg = network_for(cfg, point, data.feature_dim);
    TrainConfig tcfg = train_config_for(cfg, point);
    tcfg.seed = train_seed(cfg.seed, point.index, realization);

    Rng init_rng(net_seed(cfg.seed, point.index, realization));
    RsbNet net(ncfg, init_rng);
    const TrainResult result = train(net, prep.train_scaled, prep.valid_scaled, tcfg);

    const OutcomeScaler* scaler = cfg.standardize_outcomes ? &prep.scaler : nullptr;
    SweepRecord rec;
    rec.grid_point = point.index;
    rec.realization = realization;
    rec.train_seed = tcfg.seed;
    rec.selection_sqrt_pehe_nn = selection_pehe_nn(net, prep.r, prep.split, prep.nz, scaler);
    rec.best_valid_objective = result.best_valid_objective;
    rec.iterations = result.iterations_done;
    return rec;
}

RealizationRecord run_final_job(const ExperimentConfig& cfg, const Dataset& data,
                                const GridPoint& point, std::size_t realization,
                                std::string* checkpoint_out,
                                std::vector<HistoryRecord>* history_out) {
    const PreparedRealization prep = prepare_realization(cfg, data, realization);
    const NetworkConfig ncfg = network_for(cfg, point, data.feature_dim);
    TrainConfig tcfg = train_config_for(cfg, point);
    tcfg.seed = train_seed(cfg.seed, point.index, realization);

    Rng init_rng(net_seed(cfg.seed, point.index, realization));
    RsbNet net(ncfg, init_rng);
    HistorySink sink;
    if (history_out) {
        sink = [history_out](const HistoryRecord& rec) { history_out->push_back(rec); };
    }
    const TrainResult result = train(net, prep.train_scaled, prep.valid_scaled, tcfg, sink);

    const OutcomeScaler* scaler = cfg.standardize_outcomes ? &prep.scaler : nullptr;
    RealizationRecord rec;
    rec.realization = realization;
    rec.grid_point = point.index;
    rec.train_seed = tcfg.seed;
    rec.training = result;
    rec.within = evaluate_scope(net, prep.r, prep.split, prep.nz, scaler,
                                EvalScope::within_sample, realization);
    rec.out = evaluate_scope(net, prep.r, prep.split, prep.nz, scaler,
                             EvalScope::out_of_sample, realization);
    if (checkpoint_out) {
        *checkpoint_out = checkpoint_to_string(net);
    }
    return rec;
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    for (auto& th : pool) {
        th.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

SweepOutcome run_sweep(const ExperimentConfig& cfg, const Dataset& data,
                       const std::vector<GridPoint>& grid, std::size_t workers) {
    const std::size_t tuning = resolved_tuning_count(cfg);
    const std::size_t begin = cfg.realization_begin;

    SweepOutcome outcome;
    outcome.records.resize(grid.size() * tuning);
    // job order is (grid, realization) row-major; records land by index, so
    // the merged output is identical for any worker count
    parallel_for(outcome.records.size(), workers, [&](std::size_t job) {
        const std::size_t g = job / tuning;
        const std::size_t h = begin + job % tuning;
        outcome.records[job] = run_sweep_job(cfg, data, grid[g], h);
    });

    outcome.mean_by_point.resize(grid.size(), 0.0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tuning; ++k) {
            acc += outcome.records[g * tuning + k].selection_sqrt_pehe_nn;
        }
        outcome.mean_by_point[g] = acc / static_cast<double>(tuning);
    }
    outcome.best_point = 0;
    for (std::size_t g = 1; g < grid.size(); ++g) {
        if (outcome.mean_by_point[g] < outcome.mean_by_point[outcome.best_point]) {
            outcome.best_point = g;
        }
    }
    return outcome;
}

void write_sweep_reports(const std::string& out_dir, const ExperimentConfig& cfg,
                         const std::vector<GridPoint>& grid, const SweepOutcome& outcome) {
    const fs::path out(out_dir);
    std::string sweep_lines;
    for (const auto& rec : outcome.records) {
        sweep_lines += to_json(rec).dump();
        sweep_lines += '\n';
    }
    write_text_file((out / "sweep.jsonl").string(), sweep_lines);

    json selection;
    selection["best_grid_point"] = outcome.best_point;
    selection["tuning_realizations"] = resolved_tuning_count(cfg);
    json points = json::array();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        json p;
        p["grid_point"] = g;
        p["values"] = json(grid[g].values);
        p["mean_selection_sqrt_pehe_nn"] = outcome.mean_by_point[g];
        points.push_back(p);
    }
    selection["points"] = points;
    write_text_file((out / "selection.json").string(), selection.dump(2) + "\n");
}

std::vector<RealizationRecord> run_final(const ExperimentConfig& cfg, const Dataset& data,
                                         const GridPoint& point, std::size_t workers) {
    const std::size_t begin = cfg.realization_begin;
    const std::size_t count = cfg.realization_end - begin;
    std::vector<RealizationRecord> records(count);
    parallel_for(count, workers, [&](std::size_t k) {
        records[k] = run_final_job(cfg, data, point, begin + k);
    });
    return records;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

json to_json(const SweepRecord& rec) {
    json j;
    j["grid_point"] = rec.grid_point;
    j["realization"] = rec.realization;
    j["train_seed"] = rec.train_seed;
    j["selection_sqrt_pehe_nn"] = rec.selection_sqrt_pehe_nn;
    j["best_valid_objective"] = rec.best_valid_objective;
    j["iterations"] = rec.iterations;
    return j;
}

json to_json(const RealizationRecord& rec) {
    json j;
    j["realization"] = rec.realization;
    j["grid_point"] = rec.grid_point;
    j["train_seed"] = rec.train_seed;
    j["u"] = rec.training.u;
    j["iterations"] = rec.training.iterations_done;
    j["best_iteration"] = rec.training.best_iteration;
    j["early_stopped"] = rec.training.early_stopped;
    j["best_valid_objective"] = rec.training.best_valid_objective;
    j["within_sqrt_pehe_nn"] = rec.within.sqrt_pehe_nn;
    if (rec.within.sqrt_pehe) {
        j["within_sqrt_pehe"] = *rec.within.sqrt_pehe;
        j["within_ate_error"] = *rec.within.ate_error;
    }
    j["out_sqrt_pehe_nn"] = rec.out.sqrt_pehe_nn;
    if (rec.out.sqrt_pehe) {
        j["out_sqrt_pehe"] = *rec.out.sqrt_pehe;
        j["out_ate_error"] = *rec.out.ate_error;
    }
    return j;
}

namespace {

json summary_json(const MetricSummary& s) {
    json j;
    j["mean"] = s.mean;
    j["std_error"] = s.std_error;
    j["n"] = s.n;
    return j;
}

const std::vector<std::string>& metric_field_names() {
    static const std::vector<std::string> names = {
        "within_sqrt_pehe", "within_ate_error", "within_sqrt_pehe_nn",
        "out_sqrt_pehe",    "out_ate_error",    "out_sqrt_pehe_nn",
    };
    return names;
}

} // namespace

json aggregate_json(const std::vector<RealizationRecord>& records, const GridPoint& point) {
    if (records.size() < 2) {
        throw ContractError("aggregate report needs at least 2 realizations");
    }
    std::vector<EvalReport> within;
    std::vector<EvalReport> out;
    within.reserve(records.size());
    out.reserve(records.size());
    for (const auto& rec : records) {
        within.push_back(rec.within);
        out.push_back(rec.out);
    }
    const AggregateReport agg_within = aggregate(within);
    const AggregateReport agg_out = aggregate(out);

    json metrics;
    metrics["within_sqrt_pehe_nn"] = summary_json(agg_within.sqrt_pehe_nn);
    metrics["out_sqrt_pehe_nn"] = summary_json(agg_out.sqrt_pehe_nn);
    if (agg_within.sqrt_pehe) {
        metrics["within_sqrt_pehe"] = summary_json(*agg_within.sqrt_pehe);
        metrics["within_ate_error"] = summary_json(*agg_within.ate_error);
    }
    if (agg_out.sqrt_pehe) {
        metrics["out_sqrt_pehe"] = summary_json(*agg_out.sqrt_pehe);
        metrics["out_ate_error"] = summary_json(*agg_out.ate_error);
    }

    json j;
    j["n_realizations"] = records.size();
    j["grid_point"] = {{"index", point.index}, {"values", json(point.values)}};
    j["metrics"] = metrics;
    return j;
}

std::map<std::string, std::vector<double>> metric_columns(const std::string& jsonl_path) {
    std::map<std::string, std::vector<double>> columns;
    const std::string text = read_text_file(jsonl_path);
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            eol = text.size();
        }
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(jsonl_path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        for (const auto& name : metric_field_names()) {
            if (rec.contains(name)) {
                columns[name].push_back(rec[name].get<double>());
            }
        }
    }
    if (columns.empty()) {
        throw ParseError(jsonl_path + ": no metric records found");
    }
    return columns;
}

json welch_against(const std::map<std::string, std::vector<double>>& ours,
                   const std::string& baseline_path) {
    const auto base = metric_columns(baseline_path);
    json metrics;
    for (const auto& [name, values] : ours) {
        const auto it = base.find(name);
        if (it == base.end() || values.size() < 2 || it->second.size() < 2) {
            continue;
        }
        const WelchResult w = welch_t_test(values, it->second);
        json entry;
        entry["t_stat"] = w.t_stat;
        entry["dof"] = w.dof;
        entry["p_value"] = w.p_value;
        entry["significant"] = w.significant;
        entry["alpha"] = w.alpha;
        entry["mean"] = summarize(values).mean;
        entry["baseline_mean"] = summarize(it->second).mean;
        metrics[name] = entry;
    }
    json j;
    j["baseline"] = baseline_path;
    j["metrics"] = metrics;
    return j;
}

json report_from_file(const std::string& jsonl_path, const std::string& baseline_path) {
    const auto columns = metric_columns(jsonl_path);
    json metrics;
    std::size_t n = 0;
    for (const auto& [name, values] : columns) {
        if (values.size() >= 2) {
            metrics[name] = summary_json(summarize(values));
        }
        n = std::max(n, values.size());
    }
    json j;
    j["n_realizations"] = n;
    j["metrics"] = metrics;
    if (!baseline_path.empty()) {
        j["welch_vs_baseline"] = welch_against(columns, baseline_path);
    }
    return j;
}

Realization convert_external_file(const std::string& path) {
    const std::string text = read_text_file(path);

    Realization r;
    std::vector<std::vector<double>> rows;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) -> ParseError {
        return ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            eol = text.size();
        }
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }

        std::vector<double> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            const std::string token = line.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            std::size_t used = 0;
            double value = 0.0;
            try {
                value = std::stod(token, &used);
            } catch (const std::exception&) {
                throw fail("bad number '" + token + "'");
            }
            if (used != token.size() || !std::isfinite(value)) {
                throw fail("bad number '" + token + "'");
            }
            fields.push_back(value);
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        if (fields.size() < 6) {
            throw fail("expected t, y_factual, y_cfactual, mu0, mu1 and at least one "
                       "covariate; got " + std::to_string(fields.size()) + " fields");
        }
        if (!rows.empty() && fields.size() != rows.front().size()) {
            throw fail("expected " + std::to_string(rows.front().size()) +
                       " fields, got " + std::to_string(fields.size()));
        }
        if (fields[0] != 0.0 && fields[0] != 1.0) {
            throw fail("treatment must be 0 or 1");
        }
        rows.push_back(std::move(fields));
    }
    if (rows.empty()) {
        throw ParseError(path + ": no data rows");
    }

    const std::size_t n = rows.size();
    const std::size_t d = rows.front().size() - 5;
    r.x = Matrix(n, d);
    r.t.reserve(n);
    r.y_f.reserve(n);
    r.y_cf.reserve(n);
    r.mu0.reserve(n);
    r.mu1.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows[i];
        r.t.push_back(static_cast<int>(row[0]));
        r.y_f.push_back(row[1]);
        r.y_cf.push_back(row[2]);
        r.mu0.push_back(row[3]);
        r.mu1.push_back(row[4]);
        for (std::size_t j = 0; j < d; ++j) {
            r.x.at(i, j) = row[5 + j];
        }
    }
    return r;
}

json history_json(const HistoryRecord& rec) {
    json j;
    j["iteration"] = rec.iteration;
    j["total"] = rec.total;
    j["pred"] = rec.components.pred;
    j["ipm"] = rec.components.ipm;
    j["recon"] = rec.components.recon;
    j["pcc"] = rec.components.pcc;
    j["reg"] = rec.components.reg;
    if (rec.valid_objective) {
        j["valid_objective"] = *rec.valid_objective;
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ParseError("cannot open '" + path + "' for writing");
    }
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) {
        throw ParseError("short write to '" + path + "'");
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ParseError("cannot open '" + path + "'");
    }
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

namespace {

std::string jsonl_of(const std::vector<json>& records) {
    std::string out;
    for (const auto& rec : records) {
        out += rec.dump();
        out += '\n';
    }
    return out;
}

} // namespace

void run_experiment(const ExperimentConfig& cfg_in, std::size_t workers) {
    ExperimentConfig cfg = cfg_in;
    if (cfg.out_dir.empty()) {
        throw ConfigError("no output directory: pass --out, set RSBNET_OUT or the "
                          "'out' config key");
    }
    const Dataset data = open_dataset(cfg);
    resolve_range(cfg, data);
    const std::vector<GridPoint> grid = expand_grid(cfg);
    // the whole grid must be well-formed before any training starts
    for (const auto& point : grid) {
        network_for(cfg, point, data.feature_dim).validate();
        train_config_for(cfg, point).validate();
    }

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    write_text_file((out / "config.json").string(),
                    resolved_config_json(cfg).dump(2) + "\n");

    GridPoint best = grid.front();
    if (grid.size() > 1) {
        const SweepOutcome sweep = run_sweep(cfg, data, grid, workers);
        best = grid[sweep.best_point];
        write_sweep_reports(cfg.out_dir, cfg, grid, sweep);
    }

    const std::vector<RealizationRecord> records = run_final(cfg, data, best, workers);
    std::vector<json> lines;
    lines.reserve(records.size());
    for (const auto& rec : records) {
        lines.push_back(to_json(rec));
    }
    const std::string realizations_path = (out / "realizations.jsonl").string();
    write_text_file(realizations_path, jsonl_of(lines));

    json agg = aggregate_json(records, best);
    if (!cfg.baseline_report.empty()) {
        agg["welch_vs_baseline"] =
            welch_against(metric_columns(realizations_path), cfg.baseline_report);
    }
    write_text_file((out / "aggregate.json").string(), agg.dump(2) + "\n");
}

} // namespace rsb::cli
