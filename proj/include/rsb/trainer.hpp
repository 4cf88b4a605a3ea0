#pragma once

#include <functional>
#include <optional>

#include "rsb/dataio.hpp"
#include "rsb/losses.hpp"
#include "rsb/model.hpp"
#include "rsb/nn.hpp"

namespace rsb {

struct TrainConfig {
    LossWeights loss_weights;
    std::size_t batch_size = 100;
    std::size_t max_iterations = 5000;
    std::size_t eval_interval = 100;
    std::size_t patience = 10;
    AdamConfig adam;
    IpmKind ipm_kind = IpmKind::wasserstein_sinkhorn;
    std::uint64_t seed = 0;

    void validate() const;
};

struct HistoryRecord {
    std::size_t iteration = 0;  // 1-based
    LossComponents components;  // unweighted term values on the minibatch
    double total = 0.0;
    std::optional<double> valid_objective;  // present on evaluation iterations
};

using HistorySink = std::function<void(const HistoryRecord&)>;

struct TrainResult {
    double best_valid_objective = 0.0;
    std::size_t best_iteration = 0;
    std::size_t iterations_done = 0;
    bool early_stopped = false;
    double u = 0.0;  // treated fraction of the training split
};

// Minibatch optimization of the composite objective with early stopping on
// the full validation objective. Inputs are consumed as-is; normalize and
// standardize before calling. The net is left at the best-validation
// checkpoint. Throws TrainingDivergedError on a non-finite loss.
TrainResult train(RsbNet& net, const SplitData& train_data, const SplitData& valid_data,
                  const TrainConfig& cfg, const HistorySink& sink = nullptr);

// Uniform draw without replacement; redraws (up to 20 times) whenever the
// batch misses a treatment arm, since the distribution-distance term needs
// both. Returns sorted indices into [0, train_size).
std::vector<std::size_t> sample_minibatch(std::size_t train_size, std::size_t batch_size,
                                          std::span<const int> t, Rng& rng);

// Full composite objective on a validation split, with sample weights built
// from the training-split treated fraction.
double validation_objective(const RsbNet& net, const SplitData& valid_data, double train_u,
                            const TrainConfig& cfg);

// One forward/backward pass over a batch: overwrites every parameter
// gradient with d(total objective)/d(param) and returns the unweighted term
// values.
LossComponents compute_losses_and_grads(RsbNet& net, const Matrix& x, std::span<const int> t,
                                        const Matrix& y, std::span<const double> w,
                                        const LossWeights& lw, IpmKind kind);

// Value-only twin of the above.
LossComponents compute_losses(const RsbNet& net, const Matrix& x, std::span<const int> t,
                              const Matrix& y, std::span<const double> w, IpmKind kind);

} // namespace rsb
