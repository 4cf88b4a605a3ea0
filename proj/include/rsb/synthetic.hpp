#pragma once

#include <cstdint>
#include <vector>

#include "rsb/matrix.hpp"

namespace rsb {

// Toy-data generator with explicit latent structure: block A drives only
// treatment assignment, block C only the outcome, block B both. Treatment
// probability decreases with the A-block mean, which plants the selection
// bias the model is supposed to strip out.
struct SyntheticConfig {
    std::size_t d_a = 5;
    std::size_t d_b = 15;
    std::size_t d_c = 5;
    std::size_t n_samples = 1000;
    std::size_t n_realizations = 1000;
    std::uint64_t seed = 0;

    std::size_t input_dim() const { return d_a + d_b + d_c; }
    void validate() const;
};

// One counterfactual dataset: factual/counterfactual outcomes plus the
// noiseless surfaces they were sampled around.
struct Realization {
    Matrix x;                  // [N x (d_a + d_b + d_c)]
    std::vector<int> t;        // 0/1
    std::vector<double> y_f;   // observed outcome, matches t
    std::vector<double> y_cf;  // outcome under 1 - t
    std::vector<double> mu0;
    std::vector<double> mu1;   // mu0 + 10 elementwise

    std::size_t size() const { return t.size(); }
};

// Covariates and treatment are drawn once and shared by every realization;
// only the outcome weights and noise vary per realization.
struct SyntheticBase {
    Matrix x;
    std::vector<int> t;
    std::vector<double> p_treat;  // p(t=1 | row), kept for audits
};

SyntheticBase generate_base(const SyntheticConfig& cfg);
Realization generate_realization(const SyntheticConfig& cfg, const SyntheticBase& base,
                                 std::size_t realization_index);

// All realizations materialized at once; fine for test-sized configs, use
// the streaming pair above when writing thousands of files.
std::vector<Realization> generate(const SyntheticConfig& cfg);

// Selection-bias fingerprint of a generated dataset: the A-block mean must
// correlate negatively with treatment, the C-block mean not at all.
struct BiasAudit {
    double corr_abar_t = 0.0;
    double corr_cbar_t = 0.0;
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
};

BiasAudit bias_audit(const Realization& r, std::size_t d_a, std::size_t d_c);

} // namespace rsb
