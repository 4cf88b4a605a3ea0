#include "rsb/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rsb/rng.hpp"

namespace rsb {

namespace {

void zero_all(std::span<ParamTensor* const> params) {
    for (ParamTensor* p : params) {
        p->zero_grad();
    }
}

} // namespace

GradCheckReport grad_check(const std::function<double()>& loss_and_grad,
                           std::span<ParamTensor* const> params,
                           const GradCheckOptions& opts) {
    if (opts.step <= 0.0) {
        throw ContractError("grad_check: step must be positive");
    }

    zero_all(params);
    const double base = loss_and_grad();
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (ParamTensor* p : params) {
        analytic.push_back(p->grad);
    }

    zero_all(params);
    const double base_again = loss_and_grad();
    if (base != base_again) {
        throw ContractError("grad_check: loss function is not deterministic (" +
                            std::to_string(base) + " vs " + std::to_string(base_again) + ")");
    }

    Rng rng(opts.seed);
    GradCheckReport report;
    report.passed = true;

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        ParamTensor& p = *params[pi];
        std::vector<std::size_t> coords(p.value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords_per_tensor > 0 && coords.size() > opts.max_coords_per_tensor) {
            rng.shuffle(coords);
            coords.resize(opts.max_coords_per_tensor);
        }

        for (std::size_t ci : coords) {
            double& w = p.value.data()[ci];
            const double saved = w;

            w = saved + opts.step;
            zero_all(params);
            const double plus = loss_and_grad();

            w = saved - opts.step;
            zero_all(params);
            const double minus = loss_and_grad();

            w = saved;

            const double numeric = (plus - minus) / (2.0 * opts.step);
            const double exact = analytic[pi].data()[ci];
            const double scale = std::max({1.0, std::abs(exact), std::abs(numeric)});
            const double rel = std::abs(exact - numeric) / scale;

            ++report.coords_checked;
            if (rel > report.worst_rel_error) {
                report.worst_rel_error = rel;
                report.worst_coord = "tensor " + std::to_string(pi) + " coord " +
                                     std::to_string(ci) + ": analytic " +
                                     std::to_string(exact) + ", numeric " +
                                     std::to_string(numeric);
            }
            if (rel > opts.tol) {
                report.passed = false;
            }
        }
    }

    // leave grads as the analytic values for the unperturbed point
    zero_all(params);
    loss_and_grad();
    return report;
}

} // namespace rsb
