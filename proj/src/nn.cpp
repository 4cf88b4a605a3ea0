#include "rsb/nn.hpp"

#include <cmath>

#include "rsb/kernels.hpp"

namespace rsb {

ActivationKind activation_from_name(const std::string& name) {
    if (name == "elu") {
        return ActivationKind::elu;
    }
    if (name == "relu") {
        return ActivationKind::relu;
    }
    if (name == "identity" || name == "linear") {
        return ActivationKind::identity;
    }
    throw ConfigError("unknown activation '" + name + "'");
}

const char* activation_name(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::elu: return "elu";
        case ActivationKind::relu: return "relu";
        case ActivationKind::identity: return "identity";
    }
    return "?";
}

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
double relu(double x) { return x > 0.0 ? x : 0.0; }

namespace {

void apply_activation(Matrix& m, ActivationKind act) {
    switch (act) {
        case ActivationKind::identity:
            return;
        case ActivationKind::relu:
            for (auto& x : m.storage()) {
                x = relu(x);
            }
            return;
        case ActivationKind::elu:
            for (auto& x : m.storage()) {
                x = elu(x);
            }
            return;
    }
}

// d = upstream (.) act'(pre)
Matrix activation_backward(const Matrix& pre, const Matrix& upstream, ActivationKind act) {
    Matrix d = upstream;
    switch (act) {
        case ActivationKind::identity:
            return d;
        case ActivationKind::relu:
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (pre.data()[i] <= 0.0) {
                    d.data()[i] = 0.0;
                }
            }
            return d;
        case ActivationKind::elu:
            // elu'(x) = 1 for x > 0, exp(x) otherwise
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double z = pre.data()[i];
                if (z <= 0.0) {
                    d.data()[i] *= std::exp(z);
                }
            }
            return d;
    }
    return d;
}

} // namespace

void adam_step(std::span<ParamTensor* const> params, AdamConfig& cfg) {
    cfg.step_count += 1;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(cfg.step_count));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(cfg.step_count));
    const auto& ops = kernels::active();
    for (ParamTensor* p : params) {
        ops.adam_update(p->value.data(), p->grad.data(), p->adam_m.data(),
                        p->adam_v.data(), p->value.size(), cfg.learning_rate,
                        cfg.beta1, cfg.beta2, cfg.epsilon, bias1, bias2);
    }
}

Matrix init_weights(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
    const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (auto& x : w.storage()) {
        x = rng.normal(0.0, stddev);
    }
    return w;
}

LayerCache affine_forward(const Matrix& x, const ParamTensor& w, const ParamTensor& b,
                          ActivationKind act) {
    if (x.cols() != w.value.rows()) {
        throw DimensionError("affine_forward: input " + x.shape_str() +
                             " does not match weight " + w.value.shape_str());
    }
    if (b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
        throw DimensionError("affine_forward: bias " + b.value.shape_str() +
                             " does not match weight " + w.value.shape_str());
    }
    LayerCache cache;
    cache.act = act;
    cache.input = x;
    cache.pre_activation = matmul(x, w.value);
    kernels::active().add_bias_rows(cache.pre_activation.data(), b.value.data(),
                                    cache.pre_activation.rows(),
                                    cache.pre_activation.cols());
    cache.output = cache.pre_activation;
    apply_activation(cache.output, act);
    return cache;
}

Matrix affine_backward(const LayerCache& cache, const Matrix& upstream_grad,
                       ParamTensor& w, ParamTensor& b) {
    if (!upstream_grad.same_shape(cache.output)) {
        throw DimensionError("affine_backward: upstream " + upstream_grad.shape_str() +
                             " vs layer output " + cache.output.shape_str());
    }
    const Matrix dpre = activation_backward(cache.pre_activation, upstream_grad, cache.act);

    matmul_tn_acc(cache.input, dpre, w.grad);
    // bias grad: column sums of dpre
    for (std::size_t r = 0; r < dpre.rows(); ++r) {
        kernels::active().axpy(1.0, dpre.row_ptr(r), b.grad.data(), dpre.cols());
    }

    Matrix dx(cache.input.rows(), cache.input.cols());
    matmul_nt_acc(dpre, w.value, dx);
    return dx;
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, ActivationKind activation,
                       Rng& rng, double init_gain)
    : w(init_weights(in, out, rng, init_gain)), b(1, out), act(activation) {}

Matrix LayerStack::forward(const Matrix& x) const {
    Matrix h = x;
    for (const auto& layer : layers) {
        h = affine_forward(h, layer.w, layer.b, layer.act).output;
    }
    return h;
}

Matrix LayerStack::forward_cached(const Matrix& x, std::vector<LayerCache>& caches) const {
    caches.clear();
    caches.reserve(layers.size());
    const Matrix* h = &x;
    for (const auto& layer : layers) {
        caches.push_back(affine_forward(*h, layer.w, layer.b, layer.act));
        h = &caches.back().output;
    }
    return *h;
}

Matrix LayerStack::backward(const std::vector<LayerCache>& caches, Matrix upstream) {
    if (caches.size() != layers.size()) {
        throw ContractError("LayerStack::backward: cache count " +
                            std::to_string(caches.size()) + " vs " +
                            std::to_string(layers.size()) + " layers");
    }
    for (std::size_t i = layers.size(); i-- > 0;) {
        upstream = affine_backward(caches[i], upstream, layers[i].w, layers[i].b);
    }
    return upstream;
}

void LayerStack::collect_params(std::vector<ParamTensor*>& out) {
    for (auto& layer : layers) {
        out.push_back(&layer.w);
        out.push_back(&layer.b);
    }
}

} // namespace rsb
