#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsb/matrix.hpp"
#include "rsb/rng.hpp"

namespace rsb {

enum class ActivationKind { elu, relu, identity };

ActivationKind activation_from_name(const std::string& name);
const char* activation_name(ActivationKind kind);

/// Trainable tensor: value plus gradient accumulator and Adam state, all one
/// shape.
struct ParamTensor {
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;

    ParamTensor() = default;
    ParamTensor(std::size_t rows, std::size_t cols)
        : value(rows, cols), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}
    explicit ParamTensor(Matrix v)
        : value(std::move(v)),
          grad(value.rows(), value.cols()),
          adam_m(value.rows(), value.cols()),
          adam_v(value.rows(), value.cols()) {}

    void zero_grad() { grad.set_zero(); }
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step_count = 0;
};

/// One bias-corrected Adam update over all tensors; increments step_count.
/// Gradients are left untouched (the caller zeroes them).
void adam_step(std::span<ParamTensor* const> params, AdamConfig& cfg);

/// Scaled-normal init: entries ~ N(0, (gain / sqrt(fan_in))^2), deterministic
/// given the rng state. Biases are initialized to zero elsewhere.
Matrix init_weights(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain);

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

/// Forward results kept for the backward pass.
struct LayerCache {
    Matrix input;
    Matrix pre_activation;
    Matrix output;
    ActivationKind act = ActivationKind::identity;
};

/// out = act(x * w + b broadcast over rows); w is [in x out], b is [1 x out].
LayerCache affine_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b,
                          ActivationKind act);

/// Accumulates (+=) into w.grad and b.grad; returns the gradient w.r.t. the
/// layer input.
Matrix affine_backward(const LayerCache& cache, const Matrix& upstream_grad,
                       ParamTensor& w, ParamTensor& b);

struct DenseLayer {
    ParamTensor w;
    ParamTensor b;
    ActivationKind act = ActivationKind::elu;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, ActivationKind activation, Rng& rng,
               double init_gain);
};

/// A feed-forward stack applied in order.
struct LayerStack {
    std::vector<DenseLayer> layers;

    Matrix forward(const Matrix& x) const;
    Matrix forward_cached(const Matrix& x, std::vector<LayerCache>& caches) const;
    /// Accumulates parameter grads; returns gradient w.r.t. the stack input.
    Matrix backward(const std::vector<LayerCache>& caches, Matrix upstream);

    void collect_params(std::vector<ParamTensor*>& out);
    std::size_t input_dim() const { return layers.front().w.value.rows(); }
    std::size_t output_dim() const { return layers.back().w.value.cols(); }
};

double elu(double x);
double relu(double x);

} // namespace rsb
