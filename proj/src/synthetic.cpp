#include "rsb/synthetic.hpp"

#include <cmath>

#include "rsb/errors.hpp"
#include "rsb/rng.hpp"

namespace rsb {

namespace {

constexpr int kMaxTreatmentDraws = 100;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double block_mean(const double* row, std::size_t count) {
    double s = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
        s += row[j];
    }
    return s / static_cast<double>(count);
}

// Pearson correlation between a real-valued column and the 0/1 treatment.
double point_biserial(const std::vector<double>& v, const std::vector<int>& t) {
    const double n = static_cast<double>(v.size());
    double mv = 0.0;
    double mt = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        mv += v[i];
        mt += t[i];
    }
    mv /= n;
    mt /= n;
    double cov = 0.0;
    double var_v = 0.0;
    double var_t = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double dv = v[i] - mv;
        const double dt = static_cast<double>(t[i]) - mt;
        cov += dv * dt;
        var_v += dv * dv;
        var_t += dt * dt;
    }
    return cov / std::sqrt(var_v * var_t);
}

} // namespace

void SyntheticConfig::validate() const {
    if (d_a == 0 || d_b == 0 || d_c == 0) {
        throw ConfigError("synthetic: feature-block dimensions must be >= 1");
    }
    if (n_samples < 2) {
        throw ConfigError("synthetic: need at least 2 samples");
    }
    if (n_realizations == 0) {
        throw ConfigError("synthetic: need at least 1 realization");
    }
}

SyntheticBase generate_base(const SyntheticConfig& cfg) {
    cfg.validate();
    // Sub-stream 0 covers covariates and treatment; realization h uses
    // sub-stream h+1. This keeps realizations independently regenerable.
    Rng rng(derive_seed(cfg.seed, 0));
    const std::size_t n = cfg.n_samples;

    SyntheticBase base;
    base.x = Matrix(n, cfg.input_dim());
    base.t.resize(n);
    base.p_treat.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        // per-sample block means; the second distribution parameter is a
        // standard deviation throughout
        const double mu_a = rng.normal(0.0, 5.0);
        const double mu_b = rng.normal(4.0, 2.0);
        const double mu_c = rng.normal(6.0, 2.0);
        double* row = base.x.row_ptr(i);
        for (std::size_t j = 0; j < cfg.d_a; ++j) {
            row[j] = rng.normal(mu_a, 1.0);
        }
        for (std::size_t j = 0; j < cfg.d_b; ++j) {
            row[cfg.d_a + j] = rng.normal(mu_b, 1.0);
        }
        for (std::size_t j = 0; j < cfg.d_c; ++j) {
            row[cfg.d_a + cfg.d_b + j] = rng.normal(mu_c, 1.0);
        }
        const double abar = block_mean(row, cfg.d_a);
        const double bbar = block_mean(row + cfg.d_a, cfg.d_b);
        base.p_treat[i] = 1.0 - sigmoid(0.7 * abar + 0.3 * bbar);
    }

    for (int attempt = 0; attempt < kMaxTreatmentDraws; ++attempt) {
        std::size_t treated = 0;
        for (std::size_t i = 0; i < n; ++i) {
            base.t[i] = rng.bernoulli(base.p_treat[i]) ? 1 : 0;
            treated += static_cast<std::size_t>(base.t[i]);
        }
        if (treated > 0 && treated < n) {
            return base;
        }
    }
    throw ContractError("treatment draw left one arm empty " +
                        std::to_string(kMaxTreatmentDraws) +
                        " times in a row; the assignment probabilities are degenerate");
}

Realization generate_realization(const SyntheticConfig& cfg, const SyntheticBase& base,
                                 std::size_t realization_index) {
    if (realization_index >= cfg.n_realizations) {
        throw ContractError("realization index " + std::to_string(realization_index) +
                            " out of range for " + std::to_string(cfg.n_realizations));
    }
    Rng rng(derive_seed(cfg.seed, realization_index + 1));
    const std::size_t n = cfg.n_samples;

    std::vector<double> w(cfg.d_b + cfg.d_c);
    for (auto& wi : w) {
        wi = rng.uniform_open(0.0, 0.1);
    }

    Realization r;
    r.x = base.x;
    r.t = base.t;
    r.y_f.resize(n);
    r.y_cf.resize(n);
    r.mu0.resize(n);
    r.mu1.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
        const double* bc = base.x.row_ptr(i) + cfg.d_a;
        double dot = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            dot += w[k] * bc[k];
        }
        r.mu0[i] = dot;
        r.mu1[i] = dot + 10.0;
        // the treated-surface noise is drawn first in both branches
        const double y1 = r.mu1[i] + rng.normal();
        const double y0 = r.mu0[i] + rng.normal();
        r.y_f[i] = base.t[i] == 1 ? y1 : y0;
        r.y_cf[i] = base.t[i] == 1 ? y0 : y1;
    }
    return r;
}

std::vector<Realization> generate(const SyntheticConfig& cfg) {
    const SyntheticBase base = generate_base(cfg);
    std::vector<Realization> out;
    out.reserve(cfg.n_realizations);
    for (std::size_t h = 0; h < cfg.n_realizations; ++h) {
        out.push_back(generate_realization(cfg, base, h));
    }
    return out;
}

BiasAudit bias_audit(const Realization& r, std::size_t d_a, std::size_t d_c) {
    if (d_a == 0 || d_c == 0 || d_a + d_c > r.x.cols()) {
        throw ContractError("bias audit: block dims (" + std::to_string(d_a) + ", " +
                            std::to_string(d_c) + ") do not fit " + std::to_string(r.x.cols()) +
                            " columns");
    }
    const std::size_t n = r.size();
    std::vector<double> abar(n);
    std::vector<double> cbar(n);
    BiasAudit audit;
    for (std::size_t i = 0; i < n; ++i) {
        abar[i] = block_mean(r.x.row_ptr(i), d_a);
        cbar[i] = block_mean(r.x.row_ptr(i) + (r.x.cols() - d_c), d_c);
        if (r.t[i] == 1) {
            ++audit.n_treated;
        } else {
            ++audit.n_control;
        }
    }
    audit.corr_abar_t = point_biserial(abar, r.t);
    audit.corr_cbar_t = point_biserial(cbar, r.t);
    return audit;
}

} // namespace rsb
