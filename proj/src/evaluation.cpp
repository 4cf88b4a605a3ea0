#include "rsb/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rsb/errors.hpp"

namespace rsb {

namespace {

void check_lengths(std::span<const double> tau_hat, std::span<const double> mu1,
                   std::span<const double> mu0) {
    if (tau_hat.size() != mu1.size() || mu1.size() != mu0.size()) {
        throw ContractError("metric inputs disagree on length: " +
                            std::to_string(tau_hat.size()) + ", " + std::to_string(mu1.size()) +
                            ", " + std::to_string(mu0.size()));
    }
    if (tau_hat.empty()) {
        throw ContractError("metric inputs are empty");
    }
}

} // namespace

double pehe(std::span<const double> tau_hat, std::span<const double> mu1,
            std::span<const double> mu0) {
    check_lengths(tau_hat, mu1, mu0);
    double acc = 0.0;
    for (std::size_t i = 0; i < tau_hat.size(); ++i) {
        const double err = tau_hat[i] - (mu1[i] - mu0[i]);
        acc += err * err;
    }
    return std::sqrt(acc / static_cast<double>(tau_hat.size()));
}

double ate_error(std::span<const double> tau_hat, std::span<const double> mu1,
                 std::span<const double> mu0) {
    check_lengths(tau_hat, mu1, mu0);
    double mean_hat = 0.0;
    double mean_true = 0.0;
    for (std::size_t i = 0; i < tau_hat.size(); ++i) {
        mean_hat += tau_hat[i];
        mean_true += mu1[i] - mu0[i];
    }
    const double n = static_cast<double>(tau_hat.size());
    return std::fabs(mean_hat / n - mean_true / n);
}

double pehe_nn(const Matrix& x_query, std::span<const int> t_query,
               std::span<const double> y_query, std::span<const double> y1_hat,
               std::span<const double> y0_hat, const Matrix& x_pool,
               std::span<const int> t_pool, std::span<const double> y_pool) {
    const std::size_t nq = x_query.rows();
    if (t_query.size() != nq || y_query.size() != nq || y1_hat.size() != nq ||
        y0_hat.size() != nq) {
        throw ContractError("pehe_nn: query arrays disagree on length");
    }
    if (x_pool.rows() != t_pool.size() || t_pool.size() != y_pool.size()) {
        throw ContractError("pehe_nn: pool arrays disagree on length");
    }
    if (x_query.cols() != x_pool.cols()) {
        throw DimensionError("pehe_nn: query " + x_query.shape_str() + " vs pool " +
                             x_pool.shape_str());
    }
    if (nq == 0) {
        throw ContractError("pehe_nn: no query samples");
    }
    const auto pool_treated =
        static_cast<std::size_t>(std::count(t_pool.begin(), t_pool.end(), 1));
    if (pool_treated == 0 || pool_treated == t_pool.size()) {
        throw ContractError("pehe_nn: neighbor pool must contain both treatment arms");
    }

    const std::size_t dim = x_query.cols();
    double acc = 0.0;
    for (std::size_t i = 0; i < nq; ++i) {
        const int want = 1 - t_query[i];
        const double* qi = x_query.row_ptr(i);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < x_pool.rows(); ++j) {
            if (t_pool[j] != want) {
                continue;
            }
            const double* pj = x_pool.row_ptr(j);
            double dist = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = qi[k] - pj[k];
                dist += d * d;
            }
            if (dist < best) {  // ties resolve to the lowest pool index
                best = dist;
                best_j = j;
            }
        }
        const double proxy_ite =
            (1.0 - 2.0 * static_cast<double>(t_query[i])) * (y_pool[best_j] - y_query[i]);
        const double err = proxy_ite - (y1_hat[i] - y0_hat[i]);
        acc += err * err;
    }
    return std::sqrt(acc / static_cast<double>(nq));
}

const char* eval_scope_name(EvalScope scope) {
    return scope == EvalScope::within_sample ? "within-sample" : "out-of-sample";
}

// ---------------------------------------------------------------------------
// Report construction
// ---------------------------------------------------------------------------

namespace {

// Head outputs for the given rows, in the original outcome scale.
void predict_outcomes(const RsbNet& net, const Matrix& x_norm, const OutcomeScaler* y_scaler,
                      std::vector<double>& y1_hat, std::vector<double>& y0_hat) {
    const auto [phi_a, phi_bc] = net.encode(x_norm);
    const Matrix p1 = net.predict(phi_bc, 1);
    const Matrix p0 = net.predict(phi_bc, 0);
    y1_hat.resize(x_norm.rows());
    y0_hat.resize(x_norm.rows());
    for (std::size_t i = 0; i < x_norm.rows(); ++i) {
        y1_hat[i] = y_scaler ? y_scaler->inverse(p1.at(i, 0)) : p1.at(i, 0);
        y0_hat[i] = y_scaler ? y_scaler->inverse(p0.at(i, 0)) : p0.at(i, 0);
    }
}

std::vector<std::size_t> concat_idx(std::span<const std::size_t> a,
                                    std::span<const std::size_t> b) {
    std::vector<std::size_t> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

std::vector<std::size_t> all_idx(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = i;
    }
    return out;
}

} // namespace

EvalReport evaluate_scope(const RsbNet& net, const Realization& r, const SplitSpec& split,
                          const Normalizer& nz, const OutcomeScaler* y_scaler, EvalScope scope,
                          std::size_t realization_id) {
    const std::vector<std::size_t> query_idx =
        scope == EvalScope::within_sample ? concat_idx(split.train_idx, split.valid_idx)
                                          : split.test_idx;
    const std::vector<std::size_t> pool_idx = scope == EvalScope::within_sample
                                                  ? query_idx
                                                  : all_idx(r.size());

    const SplitData query = gather_split(r, query_idx);
    const SplitData pool = gather_split(r, pool_idx);
    const Matrix xq = nz.apply(query.x);
    const Matrix xp = nz.apply(pool.x);

    std::vector<double> y1_hat;
    std::vector<double> y0_hat;
    predict_outcomes(net, xq, y_scaler, y1_hat, y0_hat);

    EvalReport report;
    report.scope = scope;
    report.realization_id = realization_id;
    report.sqrt_pehe_nn =
        pehe_nn(xq, query.t, query.y_f, y1_hat, y0_hat, xp, pool.t, pool.y_f);

    if (!query.mu0.empty()) {
        std::vector<double> tau_hat(y1_hat.size());
        for (std::size_t i = 0; i < tau_hat.size(); ++i) {
            tau_hat[i] = y1_hat[i] - y0_hat[i];
        }
        report.sqrt_pehe = pehe(tau_hat, query.mu1, query.mu0);
        report.ate_error = ate_error(tau_hat, query.mu1, query.mu0);
    }
    return report;
}

double selection_pehe_nn(const RsbNet& net, const Realization& r, const SplitSpec& split,
                         const Normalizer& nz, const OutcomeScaler* y_scaler) {
    const SplitData query = gather_split(r, split.valid_idx);
    const SplitData pool = gather_split(r, concat_idx(split.train_idx, split.valid_idx));
    const Matrix xq = nz.apply(query.x);
    const Matrix xp = nz.apply(pool.x);
    std::vector<double> y1_hat;
    std::vector<double> y0_hat;
    predict_outcomes(net, xq, y_scaler, y1_hat, y0_hat);
    return pehe_nn(xq, query.t, query.y_f, y1_hat, y0_hat, xp, pool.t, pool.y_f);
}

// ---------------------------------------------------------------------------
// Aggregation and significance
// ---------------------------------------------------------------------------

MetricSummary summarize(std::span<const double> values) {
    if (values.size() < 2) {
        throw ContractError("summary needs at least 2 values");
    }
    MetricSummary s;
    s.n = values.size();
    for (double v : values) {
        s.mean += v;
    }
    s.mean /= static_cast<double>(s.n);
    double var = 0.0;
    for (double v : values) {
        const double dev = v - s.mean;
        var += dev * dev;
    }
    var /= static_cast<double>(s.n - 1);
    s.std_error = std::sqrt(var / static_cast<double>(s.n));
    return s;
}

AggregateReport aggregate(std::span<const EvalReport> reports) {
    if (reports.size() < 2) {
        throw ContractError("aggregate needs at least 2 realizations");
    }
    AggregateReport agg;
    agg.n_realizations = reports.size();

    std::vector<double> nn;
    nn.reserve(reports.size());
    for (const auto& rep : reports) {
        nn.push_back(rep.sqrt_pehe_nn);
    }
    agg.sqrt_pehe_nn = summarize(nn);

    const bool have_truth =
        std::all_of(reports.begin(), reports.end(),
                    [](const EvalReport& rep) { return rep.sqrt_pehe.has_value(); });
    if (have_truth) {
        std::vector<double> pe;
        std::vector<double> ae;
        pe.reserve(reports.size());
        ae.reserve(reports.size());
        for (const auto& rep : reports) {
            pe.push_back(*rep.sqrt_pehe);
            ae.push_back(*rep.ate_error);
        }
        agg.sqrt_pehe = summarize(pe);
        agg.ate_error = summarize(ae);
    }
    return agg;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz scheme).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) {
            break;
        }
    }
    return h;
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) {
        throw ContractError("incomplete beta needs positive shape parameters");
    }
    if (x <= 0.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_cf(a, b, x) / a;
    }
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
    if (a.size() < 2 || b.size() < 2) {
        throw ContractError("welch test needs at least 2 values per sample");
    }
    auto mean_var = [](std::span<const double> v) {
        double mean = 0.0;
        for (double x : v) {
            mean += x;
        }
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) {
            const double dev = x - mean;
            var += dev * dev;
        }
        var /= static_cast<double>(v.size() - 1);
        return std::pair{mean, var};
    };
    const auto [mean_a, var_a] = mean_var(a);
    const auto [mean_b, var_b] = mean_var(b);
    if (var_a == 0.0 && var_b == 0.0) {
        throw ContractError("welch test needs nonzero variance in at least one sample");
    }

    const double sa = var_a / static_cast<double>(a.size());
    const double sb = var_b / static_cast<double>(b.size());
    const double se2 = sa + sb;

    WelchResult res;
    res.alpha = alpha;
    res.t_stat = (mean_a - mean_b) / std::sqrt(se2);
    res.dof = se2 * se2 /
              (sa * sa / static_cast<double>(a.size() - 1) +
               sb * sb / static_cast<double>(b.size() - 1));
    // two-sided p from the Student-t CDF in incomplete-beta form
    res.p_value =
        incomplete_beta(res.dof / 2.0, 0.5, res.dof / (res.dof + res.t_stat * res.t_stat));
    res.significant = res.p_value < alpha;
    return res;
}

} // namespace rsb
