#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsb/matrix.hpp"
#include "rsb/synthetic.hpp"

namespace rsb {

// Canonical on-disk form: one text file per realization with a column-schema
// header `x_1,...,x_d,t,y_f[,y_cf,mu0,mu1]`. Values are written with
// shortest-round-trip formatting, so write -> read is bitwise stable.
Realization read_realization_file(const std::string& path);
void write_realization_file(const Realization& r, const std::string& path);

struct DatasetBundle {
    std::vector<Realization> realizations;
    std::size_t feature_dim = 0;
    std::string name;
};

// Loads every path in order; rejects mixed shapes across realizations.
DatasetBundle load_bundle(const std::vector<std::string>& paths, const std::string& name);

// 63/27/10 split: test = round(0.10 n), valid = round(0.30 (n - test)),
// train = rest; one fresh shuffle per (seed, realization) pair via
// derive_seed. Index lists come back sorted.
struct SplitSpec {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> valid_idx;
    std::vector<std::size_t> test_idx;
    std::uint64_t seed = 0;
};

SplitSpec split(std::size_t n, std::uint64_t seed);

// Per-feature affine transform fitted on training rows only. Min-max maps
// the training range onto [0,1]; other rows may land outside (no clipping).
// Constant features map to 0 under both kinds.
class Normalizer {
public:
    enum class Kind { min_max, z_score };

    static Normalizer fit(const Matrix& x_train, Kind kind = Kind::min_max);
    Matrix apply(const Matrix& x) const;

    Kind kind() const { return kind_; }
    std::size_t feature_dim() const { return offset_.size(); }

private:
    Kind kind_ = Kind::min_max;
    std::vector<double> offset_;
    std::vector<double> scale_;  // 0 marks a degenerate feature
};

const char* normalizer_kind_name(Normalizer::Kind kind);
Normalizer::Kind normalizer_kind_from_name(const std::string& name);

// Zero-mean/unit-std transform for outcomes, fitted on training y only and
// undone before metrics are computed.
struct OutcomeScaler {
    double mean = 0.0;
    double std_dev = 1.0;

    static OutcomeScaler fit(std::span<const double> y_train);
    double transform(double y) const { return (y - mean) / std_dev; }
    double inverse(double y) const { return y * std_dev + mean; }
};

// Rows of one realization restricted to an index list.
struct SplitData {
    Matrix x;
    std::vector<int> t;
    std::vector<double> y_f;
    std::vector<double> y_cf;
    std::vector<double> mu0;
    std::vector<double> mu1;
};

SplitData gather_split(const Realization& r, std::span<const std::size_t> idx);

} // namespace rsb
