#include "rsb/losses.hpp"

#include <cmath>

#include "rsb/errors.hpp"
#include "rsb/kernels.hpp"

namespace rsb {

void LossWeights::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || lambda < 0) {
        throw ConfigError("loss weights must be non-negative");
    }
}

const char* ipm_kind_name(IpmKind kind) {
    switch (kind) {
    case IpmKind::wasserstein_sinkhorn: return "wasserstein-sinkhorn";
    case IpmKind::linear_mmd: return "linear-mmd";
    }
    return "?";
}

IpmKind ipm_kind_from_name(const std::string& name) {
    if (name == "wasserstein-sinkhorn") return IpmKind::wasserstein_sinkhorn;
    if (name == "linear-mmd") return IpmKind::linear_mmd;
    throw ConfigError("unknown ipm kind '" + name +
                      "' (expected wasserstein-sinkhorn or linear-mmd)");
}

std::vector<double> sample_weights_for(std::span<const int> t, double u) {
    if (!(u > 0.0 && u < 1.0)) {
        throw ContractError("treated fraction u must lie in (0,1), got " + std::to_string(u));
    }
    const double w1 = 1.0 / (2.0 * u);
    const double w0 = 1.0 / (2.0 * (1.0 - u));
    std::vector<double> w;
    w.reserve(t.size());
    for (int ti : t) {
        if (ti != 0 && ti != 1) {
            throw ContractError("treatment must be 0 or 1, got " + std::to_string(ti));
        }
        w.push_back(ti == 1 ? w1 : w0);
    }
    return w;
}

SampleWeights compute_sample_weights(std::span<const int> t) {
    if (t.empty()) {
        throw ContractError("sample weights need at least one sample");
    }
    std::size_t treated = 0;
    for (int ti : t) {
        if (ti != 0 && ti != 1) {
            throw ContractError("treatment must be 0 or 1, got " + std::to_string(ti));
        }
        treated += static_cast<std::size_t>(ti);
    }
    if (treated == 0 || treated == t.size()) {
        throw EmptyArmError("sample weights need both treatment arms present");
    }
    SampleWeights sw;
    sw.u = static_cast<double>(treated) / static_cast<double>(t.size());
    sw.w = sample_weights_for(t, sw.u);
    return sw;
}

double prediction_loss(const Matrix& y_hat, const Matrix& y, std::span<const double> w,
                       Matrix& d_y_hat) {
    if (!y_hat.same_shape(y) || y_hat.cols() != 1) {
        throw DimensionError("prediction loss expects matching column vectors, got " +
                             y_hat.shape_str() + " and " + y.shape_str());
    }
    const std::size_t n = y_hat.rows();
    if (n == 0) {
        throw ContractError("prediction loss needs at least one sample");
    }
    if (w.size() != n) {
        throw ContractError("prediction loss: " + std::to_string(w.size()) +
                            " weights for " + std::to_string(n) + " samples");
    }
    d_y_hat = Matrix(n, 1);
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(w[i] > 0.0)) {
            throw ContractError("prediction loss: sample weights must be positive");
        }
        const double err = y_hat.at(i, 0) - y.at(i, 0);
        loss += w[i] * err * err;
        d_y_hat.at(i, 0) = 2.0 * w[i] * err * inv_n;
    }
    return loss * inv_n;
}

double recon_loss(const Matrix& x_hat, const Matrix& x, Matrix& d_x_hat) {
    if (!x_hat.same_shape(x)) {
        throw DimensionError("recon loss expects matching shapes, got " + x_hat.shape_str() +
                             " and " + x.shape_str());
    }
    if (x_hat.rows() == 0) {
        throw ContractError("recon loss needs at least one sample");
    }
    d_x_hat = Matrix(x_hat.rows(), x_hat.cols());
    const double inv_n = 1.0 / static_cast<double>(x_hat.rows());
    double loss = 0.0;
    for (std::size_t idx = 0; idx < x_hat.size(); ++idx) {
        const double err = x_hat.data()[idx] - x.data()[idx];
        loss += err * err;
        d_x_hat.data()[idx] = 2.0 * err * inv_n;
    }
    return loss * inv_n;
}

// ---------------------------------------------------------------------------
// Correlation loss
// ---------------------------------------------------------------------------

namespace {

constexpr double kStdEps = 1e-8;

struct ColumnStats {
    std::vector<double> raw_std;  // population sigma, before stabilization
    std::vector<double> divisor;  // sigma + kStdEps
};

// out column j = (src column j - mean_j) / (sigma_j + eps).
ColumnStats standardize_columns(const Matrix& src, Matrix& out) {
    const std::size_t n = src.rows();
    const std::size_t c = src.cols();
    out = Matrix(n, c);
    ColumnStats st;
    st.raw_std.resize(c);
    st.divisor.resize(c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += src.at(i, j);
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dev = src.at(i, j) - mean;
            var += dev * dev;
        }
        var *= inv_n;
        st.raw_std[j] = std::sqrt(var);
        st.divisor[j] = st.raw_std[j] + kStdEps;
        for (std::size_t i = 0; i < n; ++i) {
            out.at(i, j) = (src.at(i, j) - mean) / st.divisor[j];
        }
    }
    return st;
}

// Pulls d(loss)/d(standardized columns) back through centering and the
// (sigma + eps) divisor. For an exactly constant column the loss gradient
// vanishes, so the sigma-path term is dropped there.
void destandardize_grad(const Matrix& g_hat, const Matrix& hat, const ColumnStats& st,
                        Matrix& d_src) {
    const std::size_t n = g_hat.rows();
    const std::size_t c = g_hat.cols();
    d_src = Matrix(n, c);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) {
        double g_mean = 0.0;
        double g_dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            g_mean += g_hat.at(i, j);
            g_dot += g_hat.at(i, j) * hat.at(i, j);
        }
        g_mean *= inv_n;
        const double sigma_coef =
            st.raw_std[j] > 0.0 ? g_dot * inv_n / st.raw_std[j] : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d_src.at(i, j) =
                (g_hat.at(i, j) - g_mean) / st.divisor[j] - hat.at(i, j) * sigma_coef;
        }
    }
}

} // namespace

double pcc_loss(const Matrix& phi_a, const Matrix& phi_bc, Matrix& d_phi_a, Matrix& d_phi_bc) {
    if (phi_a.rows() != phi_bc.rows()) {
        throw DimensionError("pcc loss expects equal row counts, got " + phi_a.shape_str() +
                             " and " + phi_bc.shape_str());
    }
    const std::size_t n_samples = phi_a.rows();
    if (n_samples < 2) {
        throw ContractError("pcc loss needs at least 2 samples");
    }
    const std::size_t m = phi_a.cols();
    const std::size_t n = phi_bc.cols();
    if (m == 0 || n == 0) {
        throw ContractError("pcc loss needs non-empty column blocks");
    }

    Matrix a_hat;
    Matrix b_hat;
    const ColumnStats stats_a = standardize_columns(phi_a, a_hat);
    const ColumnStats stats_b = standardize_columns(phi_bc, b_hat);

    // rho_ij = (1/N) <a_hat col i, b_hat col j>
    Matrix rho(m, n);
    matmul_tn_acc(a_hat, b_hat, rho);
    rho *= 1.0 / static_cast<double>(n_samples);

    const double loss = kernels::active().sum_sq(rho.data(), rho.size()) /
                        (2.0 * static_cast<double>(m) * static_cast<double>(n));

    // loss = ||rho||_F^2 / (2mn) with rho = (1/N) a_hat^T b_hat, hence
    // d/d a_hat = b_hat rho^T / (mnN) and d/d b_hat = a_hat rho / (mnN).
    const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(n) *
                                static_cast<double>(n_samples));
    Matrix g_a(n_samples, m);
    matmul_nt_acc(b_hat, rho, g_a);
    g_a *= scale;
    Matrix g_b(n_samples, n);
    matmul_acc(a_hat, rho, g_b);
    g_b *= scale;

    destandardize_grad(g_a, a_hat, stats_a, d_phi_a);
    destandardize_grad(g_b, b_hat, stats_b, d_phi_bc);
    return loss;
}

// ---------------------------------------------------------------------------
// Weight regularizer and the combined objective
// ---------------------------------------------------------------------------

double weight_regularizer_value(const RsbNet& net) {
    const auto& ops = kernels::active();
    double total = 0.0;
    for (const LayerStack* stack : {&net.encoder, &net.decoder, &net.head0, &net.head1}) {
        for (const DenseLayer& layer : stack->layers) {
            total += ops.sum_sq(layer.w.value.data(), layer.w.value.size());
        }
    }
    return total;
}

void weight_regularizer_grad(RsbNet& net, double scale) {
    const auto& ops = kernels::active();
    for (LayerStack* stack : {&net.encoder, &net.decoder, &net.head0, &net.head1}) {
        for (DenseLayer& layer : stack->layers) {
            ops.axpy(2.0 * scale, layer.w.value.data(), layer.w.grad.data(),
                     layer.w.value.size());
        }
    }
}

double total_loss(const LossComponents& c, const LossWeights& lw) {
    lw.validate();
    return c.pred + lw.alpha * c.ipm + lw.beta * c.recon + lw.gamma * c.pcc + lw.lambda * c.reg;
}

} // namespace rsb
