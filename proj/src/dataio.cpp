#include "rsb/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string_view>

#include "rsb/errors.hpp"
#include "rsb/rng.hpp"

namespace rsb {

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

[[noreturn]] void fail_at(const std::string& path, std::size_t line_no, std::size_t byte_off,
                          const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line_no) + " (byte " +
                     std::to_string(byte_off) + "): " + what);
}

double parse_double(std::string_view tok, const std::string& path, std::size_t line_no,
                    std::size_t byte_off) {
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        fail_at(path, line_no, byte_off, "bad number '" + std::string(tok) + "'");
    }
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

struct ColumnLayout {
    std::size_t d = 0;
    bool has_cf = false;
    bool has_mu = false;

    std::size_t total() const {
        return d + 2 + (has_cf ? 1 : 0) + (has_mu ? 2 : 0);
    }
};

// Header order is fixed: x_1..x_d, t, y_f, then optional y_cf and mu0+mu1.
ColumnLayout parse_header(const std::vector<std::string_view>& names, const std::string& path,
                          std::size_t byte_off) {
    ColumnLayout layout;
    std::size_t pos = 0;
    while (pos < names.size()) {
        const std::string expect = "x_" + std::to_string(pos + 1);
        if (names[pos] != expect) {
            break;
        }
        ++pos;
    }
    layout.d = pos;
    if (layout.d == 0) {
        fail_at(path, 1, byte_off, "header must start with x_1");
    }
    auto take = [&](std::string_view want) {
        if (pos < names.size() && names[pos] == want) {
            ++pos;
            return true;
        }
        return false;
    };
    if (!take("t") || !take("y_f")) {
        fail_at(path, 1, byte_off, "header needs 't,y_f' after the x block");
    }
    layout.has_cf = take("y_cf");
    if (take("mu0")) {
        if (!take("mu1")) {
            fail_at(path, 1, byte_off, "mu0 without mu1");
        }
        layout.has_mu = true;
    }
    if (pos != names.size()) {
        fail_at(path, 1, byte_off, "unexpected column '" + std::string(names[pos]) + "'");
    }
    return layout;
}

} // namespace

Realization read_realization_file(const std::string& path) {
    const std::string text = slurp(path);
    if (text.empty()) {
        throw ParseError(path + ": empty file");
    }

    ColumnLayout layout;
    std::vector<std::vector<double>> x_rows;
    Realization r;

    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        const std::size_t line_start = pos;
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) {
            eol = text.size();
        }
        std::string_view line(text.data() + pos, eol - pos);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        pos = eol + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }

        const auto fields = split_fields(line);
        if (line_no == 1) {
            layout = parse_header(fields, path, line_start);
            continue;
        }
        if (fields.size() != layout.total()) {
            fail_at(path, line_no, line_start,
                    "expected " + std::to_string(layout.total()) + " fields, got " +
                        std::to_string(fields.size()));
        }
        std::vector<double> row(layout.d);
        for (std::size_t j = 0; j < layout.d; ++j) {
            row[j] = parse_double(fields[j], path, line_no, line_start);
        }
        x_rows.push_back(std::move(row));

        std::size_t f = layout.d;
        const double t_val = parse_double(fields[f++], path, line_no, line_start);
        if (t_val != 0.0 && t_val != 1.0) {
            fail_at(path, line_no, line_start, "treatment must be 0 or 1");
        }
        r.t.push_back(t_val == 1.0 ? 1 : 0);
        r.y_f.push_back(parse_double(fields[f++], path, line_no, line_start));
        if (layout.has_cf) {
            r.y_cf.push_back(parse_double(fields[f++], path, line_no, line_start));
        }
        if (layout.has_mu) {
            r.mu0.push_back(parse_double(fields[f++], path, line_no, line_start));
            r.mu1.push_back(parse_double(fields[f++], path, line_no, line_start));
        }
    }

    if (line_no == 0) {
        throw ParseError(path + ": missing header");
    }
    if (x_rows.empty()) {
        throw ParseError(path + ": no data rows");
    }
    r.x = Matrix::from_rows(x_rows);
    if (!r.x.all_finite()) {
        throw ParseError(path + ": non-finite covariate value");
    }
    for (const auto* vec : {&r.y_f, &r.y_cf, &r.mu0, &r.mu1}) {
        for (double v : *vec) {
            if (!std::isfinite(v)) {
                throw ParseError(path + ": non-finite outcome value");
            }
        }
    }
    const auto treated = static_cast<std::size_t>(std::count(r.t.begin(), r.t.end(), 1));
    if (treated == 0 || treated == r.t.size()) {
        throw ParseError(path + ": only one treatment arm present");
    }
    return r;
}

void write_realization_file(const Realization& r, const std::string& path) {
    const std::size_t n = r.size();
    const std::size_t d = r.x.cols();
    if (r.x.rows() != n || r.y_f.size() != n) {
        throw ContractError("realization fields disagree on sample count");
    }
    for (const auto* vec : {&r.y_cf, &r.mu0, &r.mu1}) {
        if (!vec->empty() && vec->size() != n) {
            throw ContractError("realization fields disagree on sample count");
        }
    }
    if (r.mu0.empty() != r.mu1.empty()) {
        throw ContractError("mu0 and mu1 must both be present or both absent");
    }

    std::string out;
    out.reserve(n * (d + 5) * 12);
    for (std::size_t j = 0; j < d; ++j) {
        out += "x_" + std::to_string(j + 1) + ",";
    }
    out += "t,y_f";
    if (!r.y_cf.empty()) {
        out += ",y_cf";
    }
    if (!r.mu0.empty()) {
        out += ",mu0,mu1";
    }
    out += '\n';

    for (std::size_t i = 0; i < n; ++i) {
        const double* row = r.x.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) {
            append_double(out, row[j]);
            out += ',';
        }
        out += r.t[i] == 1 ? '1' : '0';
        out += ',';
        append_double(out, r.y_f[i]);
        if (!r.y_cf.empty()) {
            out += ',';
            append_double(out, r.y_cf[i]);
        }
        if (!r.mu0.empty()) {
            out += ',';
            append_double(out, r.mu0[i]);
            out += ',';
            append_double(out, r.mu1[i]);
        }
        out += '\n';
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw ParseError("cannot open '" + path + "' for writing");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw ParseError("short write to '" + path + "'");
    }
}

DatasetBundle load_bundle(const std::vector<std::string>& paths, const std::string& name) {
    if (paths.empty()) {
        throw ContractError("bundle needs at least one file");
    }
    DatasetBundle bundle;
    bundle.name = name;
    for (const auto& path : paths) {
        Realization r = read_realization_file(path);
        if (bundle.realizations.empty()) {
            bundle.feature_dim = r.x.cols();
        } else if (r.x.cols() != bundle.feature_dim ||
                   r.size() != bundle.realizations.front().size()) {
            throw ParseError(path + ": shape " + r.x.shape_str() +
                             " disagrees with the rest of the bundle");
        }
        bundle.realizations.push_back(std::move(r));
    }
    return bundle;
}

SplitSpec split(std::size_t n, std::uint64_t seed) {
    if (n < 10) {
        throw ContractError("split needs at least 10 samples, got " + std::to_string(n));
    }
    const auto n_test = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(n)));
    const auto n_valid =
        static_cast<std::size_t>(std::llround(0.30 * static_cast<double>(n - n_test)));
    const std::size_t n_train = n - n_test - n_valid;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);

    SplitSpec s;
    s.seed = seed;
    s.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                       perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), perm.end());
    std::sort(s.train_idx.begin(), s.train_idx.end());
    std::sort(s.valid_idx.begin(), s.valid_idx.end());
    std::sort(s.test_idx.begin(), s.test_idx.end());
    return s;
}

Normalizer Normalizer::fit(const Matrix& x_train, Kind kind) {
    if (x_train.rows() == 0 || x_train.cols() == 0) {
        throw ContractError("normalizer needs at least one training row");
    }
    Normalizer nz;
    nz.kind_ = kind;
    const std::size_t d = x_train.cols();
    nz.offset_.resize(d);
    nz.scale_.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        if (kind == Kind::min_max) {
            double lo = x_train.at(0, j);
            double hi = lo;
            for (std::size_t i = 1; i < x_train.rows(); ++i) {
                lo = std::min(lo, x_train.at(i, j));
                hi = std::max(hi, x_train.at(i, j));
            }
            nz.offset_[j] = lo;
            nz.scale_[j] = hi > lo ? 1.0 / (hi - lo) : 0.0;
        } else {
            double mean = 0.0;
            for (std::size_t i = 0; i < x_train.rows(); ++i) {
                mean += x_train.at(i, j);
            }
            mean /= static_cast<double>(x_train.rows());
            double var = 0.0;
            for (std::size_t i = 0; i < x_train.rows(); ++i) {
                const double dev = x_train.at(i, j) - mean;
                var += dev * dev;
            }
            var /= static_cast<double>(x_train.rows());
            const double sd = std::sqrt(var);
            nz.offset_[j] = mean;
            nz.scale_[j] = sd > 0.0 ? 1.0 / sd : 0.0;
        }
    }
    return nz;
}

Matrix Normalizer::apply(const Matrix& x) const {
    if (x.cols() != feature_dim()) {
        throw DimensionError("normalizer fitted on " + std::to_string(feature_dim()) +
                             " features, applied to " + x.shape_str());
    }
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* src = x.row_ptr(i);
        double* dst = out.row_ptr(i);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            dst[j] = (src[j] - offset_[j]) * scale_[j];
        }
    }
    return out;
}

const char* normalizer_kind_name(Normalizer::Kind kind) {
    return kind == Normalizer::Kind::min_max ? "min-max" : "z-score";
}

Normalizer::Kind normalizer_kind_from_name(const std::string& name) {
    if (name == "min-max") {
        return Normalizer::Kind::min_max;
    }
    if (name == "z-score") {
        return Normalizer::Kind::z_score;
    }
    throw ConfigError("unknown normalizer kind '" + name + "' (expected min-max or z-score)");
}

OutcomeScaler OutcomeScaler::fit(std::span<const double> y_train) {
    if (y_train.empty()) {
        throw ContractError("outcome scaler needs at least one training value");
    }
    OutcomeScaler s;
    for (double v : y_train) {
        s.mean += v;
    }
    s.mean /= static_cast<double>(y_train.size());
    double var = 0.0;
    for (double v : y_train) {
        const double dev = v - s.mean;
        var += dev * dev;
    }
    var /= static_cast<double>(y_train.size());
    s.std_dev = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
}

SplitData gather_split(const Realization& r, std::span<const std::size_t> idx) {
    SplitData sd;
    sd.x = r.x.gather_rows(idx);
    sd.t.reserve(idx.size());
    sd.y_f.reserve(idx.size());
    for (std::size_t i : idx) {
        if (i >= r.size()) {
            throw ContractError("split index " + std::to_string(i) + " out of range");
        }
        sd.t.push_back(r.t[i]);
        sd.y_f.push_back(r.y_f[i]);
        if (!r.y_cf.empty()) {
            sd.y_cf.push_back(r.y_cf[i]);
        }
        if (!r.mu0.empty()) {
            sd.mu0.push_back(r.mu0[i]);
            sd.mu1.push_back(r.mu1[i]);
        }
    }
    return sd;
}

} // namespace rsb
