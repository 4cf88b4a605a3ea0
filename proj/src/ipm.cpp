#include <algorithm>
#include <cmath>
#include <vector>

#include "rsb/errors.hpp"
#include "rsb/losses.hpp"

namespace rsb {

namespace {

// Entropic regularization strength relative to the mean transport cost,
// iteration budget, and the exponent clamp that keeps exp() from
// underflowing on outlier pairs. 20x/50 lands the plan within a few percent
// of the exact optimum on small problems while staying numerically tame.
constexpr double kRegScale = 20.0;
constexpr int kIterations = 50;
constexpr double kExpClamp = 500.0;
// Below this transport cost the sqrt derivative is effectively singular and
// the groups coincide anyway; report the value with a zero gradient.
constexpr double kSqrtGuard = 1e-30;

struct GroupSplit {
    std::vector<std::size_t> treated;
    std::vector<std::size_t> control;
};

GroupSplit split_by_arm(std::span<const int> t) {
    GroupSplit g;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == 1) {
            g.treated.push_back(i);
        } else if (t[i] == 0) {
            g.control.push_back(i);
        } else {
            throw ContractError("treatment must be 0 or 1, got " + std::to_string(t[i]));
        }
    }
    if (g.treated.empty() || g.control.empty()) {
        throw EmptyArmError("ipm loss needs samples in both treatment arms");
    }
    return g;
}

// Entropic optimal transport between the rows of a and b under squared
// Euclidean ground cost, uniform marginals; returns sqrt(transport cost) so
// that two singletons {p}, {q} yield the plain distance ||p - q||. The
// gradient is exact: reverse sweep through every scaling iteration,
// including the dependence of the regularization on mean cost.
double sinkhorn_distance(const Matrix& a, const Matrix& b, Matrix& d_a, Matrix& d_b) {
    const std::size_t n1 = a.rows();
    const std::size_t n0 = b.rows();
    const std::size_t dim = a.cols();
    d_a = Matrix(n1, dim);
    d_b = Matrix(n0, dim);

    Matrix cost(n1, n0);
    double mean_cost = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
        const double* ra = a.row_ptr(i);
        for (std::size_t j = 0; j < n0; ++j) {
            const double* rb = b.row_ptr(j);
            double s = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = ra[k] - rb[k];
                s += diff * diff;
            }
            cost.at(i, j) = s;
            mean_cost += s;
        }
    }
    mean_cost /= static_cast<double>(n1) * static_cast<double>(n0);
    if (!(mean_cost > 0.0)) {
        return 0.0;  // every cross-pair coincides
    }

    const double lam = kRegScale / mean_cost;
    Matrix kmat(n1, n0);
    std::vector<char> clamped(n1 * n0, 0);
    for (std::size_t idx = 0; idx < kmat.size(); ++idx) {
        const double e = lam * cost.data()[idx];
        if (e > kExpClamp) {
            kmat.data()[idx] = std::exp(-kExpClamp);
            clamped[idx] = 1;
        } else {
            kmat.data()[idx] = std::exp(-e);
        }
    }

    const double am = 1.0 / static_cast<double>(n1);
    const double bm = 1.0 / static_cast<double>(n0);

    // u_it = am ./ (K v_it); v_it = bm ./ (K^T u_{it-1}); u_0 = ones.
    std::vector<std::vector<double>> us(kIterations + 1);
    std::vector<std::vector<double>> vs(kIterations + 1);
    us[0].assign(n1, 1.0);
    for (int it = 1; it <= kIterations; ++it) {
        auto& v = vs[it];
        v.assign(n0, 0.0);
        const auto& u_prev = us[it - 1];
        for (std::size_t i = 0; i < n1; ++i) {
            const double* krow = kmat.row_ptr(i);
            for (std::size_t j = 0; j < n0; ++j) {
                v[j] += krow[j] * u_prev[i];
            }
        }
        for (std::size_t j = 0; j < n0; ++j) {
            v[j] = bm / v[j];
        }
        auto& u = us[it];
        u.assign(n1, 0.0);
        for (std::size_t i = 0; i < n1; ++i) {
            const double* krow = kmat.row_ptr(i);
            double s = 0.0;
            for (std::size_t j = 0; j < n0; ++j) {
                s += krow[j] * v[j];
            }
            u[i] = am / s;
        }
    }

    const auto& u_fin = us[kIterations];
    const auto& v_fin = vs[kIterations];
    double tcost = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n0; ++j) {
            tcost += u_fin[i] * kmat.at(i, j) * v_fin[j] * cost.at(i, j);
        }
    }
    const double value = std::sqrt(std::max(tcost, 0.0));
    if (tcost < kSqrtGuard) {
        return value;
    }
    const double seed = 0.5 / value;  // d(value)/d(tcost)

    // Adjoints of the bilinear cost sum, pre-scaled by the sqrt derivative.
    std::vector<double> ubar(n1, 0.0);
    std::vector<double> vbar(n0, 0.0);
    Matrix kbar(n1, n0);
    Matrix mbar(n1, n0);
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < n0; ++j) {
            const double kij = kmat.at(i, j);
            const double mij = cost.at(i, j);
            ubar[i] += seed * kij * v_fin[j] * mij;
            vbar[j] += seed * u_fin[i] * kij * mij;
            kbar.at(i, j) = seed * u_fin[i] * v_fin[j] * mij;
            mbar.at(i, j) = seed * u_fin[i] * kij * v_fin[j];
        }
    }

    // Reverse the scaling iterations. Row/column sums s and r are recovered
    // from the stored iterates instead of being kept around.
    for (int it = kIterations; it >= 1; --it) {
        const auto& u_it = us[it];
        const auto& v_it = vs[it];
        const auto& u_prev = us[it - 1];
        for (std::size_t i = 0; i < n1; ++i) {
            const double s_i = am / u_it[i];
            const double sbar = -ubar[i] * am / (s_i * s_i);
            double* krow = kbar.row_ptr(i);
            const double* kf = kmat.row_ptr(i);
            for (std::size_t j = 0; j < n0; ++j) {
                krow[j] += sbar * v_it[j];
                vbar[j] += sbar * kf[j];
            }
        }
        std::vector<double> ubar_next(n1, 0.0);
        for (std::size_t j = 0; j < n0; ++j) {
            const double r_j = bm / v_it[j];
            const double rbar = -vbar[j] * bm / (r_j * r_j);
            for (std::size_t i = 0; i < n1; ++i) {
                kbar.at(i, j) += u_prev[i] * rbar;
                ubar_next[i] += kmat.at(i, j) * rbar;
            }
        }
        ubar = std::move(ubar_next);
        std::fill(vbar.begin(), vbar.end(), 0.0);
    }

    // K = exp(-lam * M) elementwise, except clamped entries which are flat.
    double lambar = 0.0;
    for (std::size_t idx = 0; idx < kmat.size(); ++idx) {
        if (clamped[idx]) {
            continue;
        }
        const double pull = kbar.data()[idx] * kmat.data()[idx];
        mbar.data()[idx] += pull * (-lam);
        lambar += pull * (-cost.data()[idx]);
    }
    // lam = kRegScale / mean(M), so the mean itself carries gradient.
    const double mean_bar = lambar * (-kRegScale / (mean_cost * mean_cost));
    const double per_entry = mean_bar / (static_cast<double>(n1) * static_cast<double>(n0));
    for (std::size_t idx = 0; idx < mbar.size(); ++idx) {
        mbar.data()[idx] += per_entry;
    }

    // M_ij = ||a_i - b_j||^2.
    for (std::size_t i = 0; i < n1; ++i) {
        const double* ra = a.row_ptr(i);
        double* ga = d_a.row_ptr(i);
        for (std::size_t j = 0; j < n0; ++j) {
            const double* rb = b.row_ptr(j);
            double* gb = d_b.row_ptr(j);
            const double coef = 2.0 * mbar.at(i, j);
            for (std::size_t k = 0; k < dim; ++k) {
                const double g = coef * (ra[k] - rb[k]);
                ga[k] += g;
                gb[k] -= g;
            }
        }
    }
    return value;
}

// ||mean(a rows) - mean(b rows)||_2, the linear-kernel mean discrepancy.
double linear_mmd_distance(const Matrix& a, const Matrix& b, Matrix& d_a, Matrix& d_b) {
    const std::size_t n1 = a.rows();
    const std::size_t n0 = b.rows();
    const std::size_t dim = a.cols();
    d_a = Matrix(n1, dim);
    d_b = Matrix(n0, dim);

    // Each mean is finished before differencing so that swapping the groups
    // negates diff exactly and the value is bitwise symmetric.
    std::vector<double> mean_a(dim, 0.0);
    std::vector<double> mean_b(dim, 0.0);
    for (std::size_t i = 0; i < n1; ++i) {
        const double* r = a.row_ptr(i);
        for (std::size_t k = 0; k < dim; ++k) {
            mean_a[k] += r[k];
        }
    }
    for (std::size_t j = 0; j < n0; ++j) {
        const double* r = b.row_ptr(j);
        for (std::size_t k = 0; k < dim; ++k) {
            mean_b[k] += r[k];
        }
    }
    std::vector<double> diff(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) {
        diff[k] = mean_a[k] / static_cast<double>(n1) - mean_b[k] / static_cast<double>(n0);
    }
    double sq = 0.0;
    for (double dk : diff) {
        sq += dk * dk;
    }
    const double value = std::sqrt(sq);
    if (sq < kSqrtGuard) {
        return value;
    }
    for (std::size_t i = 0; i < n1; ++i) {
        double* g = d_a.row_ptr(i);
        for (std::size_t k = 0; k < dim; ++k) {
            g[k] = diff[k] / (value * static_cast<double>(n1));
        }
    }
    for (std::size_t j = 0; j < n0; ++j) {
        double* g = d_b.row_ptr(j);
        for (std::size_t k = 0; k < dim; ++k) {
            g[k] = -diff[k] / (value * static_cast<double>(n0));
        }
    }
    return value;
}

} // namespace

double ipm_loss(const Matrix& phi_bc, std::span<const int> t, IpmKind kind, Matrix& d_phi_bc) {
    if (phi_bc.rows() != t.size()) {
        throw DimensionError("ipm loss: " + std::to_string(t.size()) +
                             " treatments for representation " + phi_bc.shape_str());
    }
    const GroupSplit g = split_by_arm(t);
    Matrix a = phi_bc.gather_rows(g.treated);
    Matrix b = phi_bc.gather_rows(g.control);
    std::span<const std::size_t> rows_a = g.treated;
    std::span<const std::size_t> rows_b = g.control;

    // A truncated scaling recursion satisfies the last-updated marginal
    // exactly, so it is not symmetric in its arguments. Orient by group size,
    // then content, so the value does not depend on which arm comes first.
    if (kind == IpmKind::wasserstein_sinkhorn) {
        const bool flip = b.rows() < a.rows() ||
                          (b.rows() == a.rows() &&
                           std::lexicographical_compare(b.storage().begin(), b.storage().end(),
                                                        a.storage().begin(), a.storage().end()));
        if (flip) {
            std::swap(a, b);
            std::swap(rows_a, rows_b);
        }
    }

    Matrix d_group_a;
    Matrix d_group_b;
    const double value = kind == IpmKind::wasserstein_sinkhorn
                             ? sinkhorn_distance(a, b, d_group_a, d_group_b)
                             : linear_mmd_distance(a, b, d_group_a, d_group_b);
    d_phi_bc = Matrix(phi_bc.rows(), phi_bc.cols());
    scatter_rows_add(d_group_a, rows_a, d_phi_bc);
    scatter_rows_add(d_group_b, rows_b, d_phi_bc);
    return value;
}

} // namespace rsb
