#pragma once

#include <span>
#include <string>
#include <vector>

#include "rsb/matrix.hpp"
#include "rsb/model.hpp"

namespace rsb {

// Scale factors of the composite training objective
//   L = L_pred + alpha * L_ipm + beta * L_recon + gamma * L_pcc + lambda * R.
struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double lambda = 1e-4;

    void validate() const;  // all must be >= 0
};

enum class IpmKind { wasserstein_sinkhorn, linear_mmd };

const char* ipm_kind_name(IpmKind kind);
IpmKind ipm_kind_from_name(const std::string& name);

// Arm-balancing sample weights. u is the treated fraction of the full
// training split; w_i = t_i/(2u) + (1-t_i)/(2(1-u)). Given u = mean(t),
// mean(w) == 1 by algebra.
struct SampleWeights {
    double u = 0.0;
    std::vector<double> w;
};

SampleWeights compute_sample_weights(std::span<const int> t);

// Weights for another split (e.g. validation) reusing the training-split u.
std::vector<double> sample_weights_for(std::span<const int> t, double u);

// Every loss returns its scalar value and overwrites the gradient output(s)
// with d(loss)/d(input), unweighted; callers scale by the loss weight.

// (1/N) sum_i w_i (y_hat_i - y_i)^2 over column vectors.
double prediction_loss(const Matrix& y_hat, const Matrix& y, std::span<const double> w,
                       Matrix& d_y_hat);

// (1/N) sum over rows of the squared L2 reconstruction error.
double recon_loss(const Matrix& x_hat, const Matrix& x, Matrix& d_x_hat);

// (1/(2mn)) sum of squared Pearson correlations between every column of
// phi_a and every column of phi_bc; population (1/N) moments, 1e-8 added to
// each standard deviation. Value lies in [0, 0.5].
double pcc_loss(const Matrix& phi_a, const Matrix& phi_bc, Matrix& d_phi_a, Matrix& d_phi_bc);

// Distance between the rows of phi_bc with t==1 and those with t==0.
// Throws EmptyArmError when either arm is absent.
double ipm_loss(const Matrix& phi_bc, std::span<const int> t, IpmKind kind, Matrix& d_phi_bc);

// Sum of squared weight-matrix entries, biases excluded.
double weight_regularizer_value(const RsbNet& net);
// Adds scale * 2W into each weight tensor's gradient accumulator.
void weight_regularizer_grad(RsbNet& net, double scale);

struct LossComponents {
    double pred = 0.0;
    double ipm = 0.0;
    double recon = 0.0;
    double pcc = 0.0;
    double reg = 0.0;
};

double total_loss(const LossComponents& c, const LossWeights& lw);

} // namespace rsb
