#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rsb/dataio.hpp"
#include "rsb/matrix.hpp"
#include "rsb/model.hpp"

namespace rsb {

// Individual-treatment-effect error against the noiseless surfaces:
// sqrt of mean squared (tau_hat - (mu1 - mu0)).
double pehe(std::span<const double> tau_hat, std::span<const double> mu1,
            std::span<const double> mu0);

// |mean(tau_hat) - mean(mu1 - mu0)|.
double ate_error(std::span<const double> tau_hat, std::span<const double> mu1,
                 std::span<const double> mu0);

// Nearest-neighbor proxy for PEHE when no ground truth exists: each query
// sample is paired with its Euclidean nearest neighbor of the opposite arm
// drawn from the pool rows (distances in whatever space x is given in, so
// pass normalized features). Query predictions are y1_hat/y0_hat pairs.
double pehe_nn(const Matrix& x_query, std::span<const int> t_query,
               std::span<const double> y_query, std::span<const double> y1_hat,
               std::span<const double> y0_hat, const Matrix& x_pool,
               std::span<const int> t_pool, std::span<const double> y_pool);

enum class EvalScope { within_sample, out_of_sample };
const char* eval_scope_name(EvalScope scope);

struct EvalReport {
    std::optional<double> sqrt_pehe;  // absent when the data has no mu0/mu1
    std::optional<double> ate_error;
    double sqrt_pehe_nn = 0.0;
    EvalScope scope = EvalScope::within_sample;
    std::size_t realization_id = 0;
};

// Scores a trained network on one realization. Within-sample uses the
// train+valid rows; out-of-sample uses the test rows as queries with
// neighbors drawn from the full dataset. The normalizer must be the one
// fitted on this realization's training rows; y_scaler (nullable) undoes
// outcome standardization before any metric is computed.
EvalReport evaluate_scope(const RsbNet& net, const Realization& r, const SplitSpec& split,
                          const Normalizer& nz, const OutcomeScaler* y_scaler, EvalScope scope,
                          std::size_t realization_id);

// Hyperparameter-selection score: validation rows as queries, neighbors from
// train+valid. Uses only factual data.
double selection_pehe_nn(const RsbNet& net, const Realization& r, const SplitSpec& split,
                         const Normalizer& nz, const OutcomeScaler* y_scaler);

struct MetricSummary {
    double mean = 0.0;
    double std_error = 0.0;  // sample std (n-1) over sqrt(n)
    std::size_t n = 0;
};

MetricSummary summarize(std::span<const double> values);

struct AggregateReport {
    std::optional<MetricSummary> sqrt_pehe;
    std::optional<MetricSummary> ate_error;
    MetricSummary sqrt_pehe_nn;
    std::size_t n_realizations = 0;
};

// Mean and standard error per metric over per-realization reports; the
// optional metrics aggregate only when present in every report.
AggregateReport aggregate(std::span<const EvalReport> reports);

struct WelchResult {
    double t_stat = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    bool significant = false;
    double alpha = 0.05;
};

// Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b,
                         double alpha = 0.05);

// Regularized incomplete beta I_x(a, b), exposed for oracle testing.
double incomplete_beta(double a, double b, double x);

} // namespace rsb
