#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "rsb/nn.hpp"

namespace rsb {

struct GradCheckOptions {
    double step = 1e-5;
    double tol = 1e-4;
    /// 0 checks every coordinate; otherwise a seeded random sample per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 12345;
};

struct GradCheckReport {
    bool passed = false;
    double worst_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::string worst_coord;
};

/// Central-difference check of analytic gradients.
///
/// loss_and_grad must evaluate the loss for the current parameter values and
/// accumulate gradients into each tensor's grad field; the harness zeroes
/// grads before every call. Relative error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). A non-deterministic
/// loss (two identical calls disagreeing) raises ContractError.
GradCheckReport grad_check(const std::function<double()>& loss_and_grad,
                           std::span<ParamTensor* const> params,
                           const GradCheckOptions& opts = {});

} // namespace rsb
