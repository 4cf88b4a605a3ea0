#include "rsb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rsb/errors.hpp"

namespace rsb {

void TrainConfig::validate() const {
    loss_weights.validate();
    if (batch_size < 4) {
        throw ConfigError("batch_size must be >= 4, got " + std::to_string(batch_size));
    }
    if (eval_interval == 0 || patience == 0) {
        throw ConfigError("eval_interval and patience must be >= 1");
    }
    if (max_iterations < eval_interval) {
        throw ConfigError("max_iterations (" + std::to_string(max_iterations) +
                          ") must cover at least one eval_interval (" +
                          std::to_string(eval_interval) + ")");
    }
    if (!(adam.learning_rate > 0.0)) {
        throw ConfigError("learning rate must be positive");
    }
}

std::vector<std::size_t> sample_minibatch(std::size_t train_size, std::size_t batch_size,
                                          std::span<const int> t, Rng& rng) {
    if (batch_size > train_size) {
        throw ContractError("batch_size " + std::to_string(batch_size) + " exceeds train size " +
                            std::to_string(train_size));
    }
    if (t.size() != train_size) {
        throw ContractError("treatment vector length does not match train size");
    }
    if (batch_size == train_size) {
        std::vector<std::size_t> all(train_size);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }

    constexpr int kMaxRedraws = 20;
    std::vector<std::size_t> pool(train_size);
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        // partial Fisher-Yates: the first batch_size slots become the draw
        for (std::size_t i = 0; i < batch_size; ++i) {
            const std::size_t j = i + rng.below(train_size - i);
            std::swap(pool[i], pool[j]);
        }
        bool saw0 = false;
        bool saw1 = false;
        for (std::size_t i = 0; i < batch_size; ++i) {
            (t[pool[i]] == 1 ? saw1 : saw0) = true;
        }
        if (saw0 && saw1) {
            std::vector<std::size_t> batch(pool.begin(),
                                           pool.begin() + static_cast<std::ptrdiff_t>(batch_size));
            std::sort(batch.begin(), batch.end());
            return batch;
        }
    }
    throw ContractError("minibatch missed a treatment arm " + std::to_string(kMaxRedraws) +
                        " times in a row; use a larger batch_size");
}

namespace {

struct ArmIndices {
    std::vector<std::size_t> control;
    std::vector<std::size_t> treated;
};

ArmIndices arms_of(std::span<const int> t) {
    ArmIndices a;
    for (std::size_t i = 0; i < t.size(); ++i) {
        (t[i] == 1 ? a.treated : a.control).push_back(i);
    }
    return a;
}

// Factual prediction: each row goes through the head matching its arm.
// Returns the assembled [N x 1] prediction; per-arm caches are kept for the
// backward pass.
Matrix predict_factual(const RsbNet& net, const Matrix& phi_bc, const ArmIndices& arms,
                       std::vector<LayerCache>* c0, std::vector<LayerCache>* c1, Matrix& out0,
                       Matrix& out1) {
    Matrix y_hat(phi_bc.rows(), 1);
    if (!arms.control.empty()) {
        const Matrix in0 = phi_bc.gather_rows(arms.control);
        out0 = c0 ? net.head0.forward_cached(in0, *c0) : net.head0.forward(in0);
        for (std::size_t k = 0; k < arms.control.size(); ++k) {
            y_hat.at(arms.control[k], 0) = out0.at(k, 0);
        }
    }
    if (!arms.treated.empty()) {
        const Matrix in1 = phi_bc.gather_rows(arms.treated);
        out1 = c1 ? net.head1.forward_cached(in1, *c1) : net.head1.forward(in1);
        for (std::size_t k = 0; k < arms.treated.size(); ++k) {
            y_hat.at(arms.treated[k], 0) = out1.at(k, 0);
        }
    }
    return y_hat;
}

} // namespace

LossComponents compute_losses(const RsbNet& net, const Matrix& x, std::span<const int> t,
                              const Matrix& y, std::span<const double> w, IpmKind kind) {
    const std::size_t m = net.config.rep_dim_a;
    const Matrix rep = net.encoder.forward(x);
    const Matrix phi_a = rep.slice_cols(0, m);
    const Matrix phi_bc = rep.slice_cols(m, net.config.rep_dim());
    const Matrix x_hat = net.decoder.forward(rep);

    const ArmIndices arms = arms_of(t);
    Matrix out0;
    Matrix out1;
    const Matrix y_hat = predict_factual(net, phi_bc, arms, nullptr, nullptr, out0, out1);

    Matrix scratch_a;
    Matrix scratch_b;
    LossComponents c;
    c.pred = prediction_loss(y_hat, y, w, scratch_a);
    c.recon = recon_loss(x_hat, x, scratch_a);
    c.pcc = pcc_loss(phi_a, phi_bc, scratch_a, scratch_b);
    c.ipm = ipm_loss(phi_bc, t, kind, scratch_a);
    c.reg = weight_regularizer_value(net);
    return c;
}

LossComponents compute_losses_and_grads(RsbNet& net, const Matrix& x, std::span<const int> t,
                                        const Matrix& y, std::span<const double> w,
                                        const LossWeights& lw, IpmKind kind) {
    lw.validate();
    net.zero_grads();
    const std::size_t m = net.config.rep_dim_a;
    const std::size_t rep_dim = net.config.rep_dim();

    std::vector<LayerCache> enc_caches;
    const Matrix rep = net.encoder.forward_cached(x, enc_caches);
    const Matrix phi_a = rep.slice_cols(0, m);
    const Matrix phi_bc = rep.slice_cols(m, rep_dim);

    // the decoder consumes [phi_a | phi_bc], which is rep itself
    std::vector<LayerCache> dec_caches;
    const Matrix x_hat = net.decoder.forward_cached(rep, dec_caches);

    const ArmIndices arms = arms_of(t);
    std::vector<LayerCache> head0_caches;
    std::vector<LayerCache> head1_caches;
    Matrix out0;
    Matrix out1;
    const Matrix y_hat =
        predict_factual(net, phi_bc, arms, &head0_caches, &head1_caches, out0, out1);

    LossComponents c;
    Matrix d_y_hat;
    c.pred = prediction_loss(y_hat, y, w, d_y_hat);
    Matrix d_x_hat;
    c.recon = recon_loss(x_hat, x, d_x_hat);
    Matrix d_phi_a_pcc;
    Matrix d_phi_bc_pcc;
    c.pcc = pcc_loss(phi_a, phi_bc, d_phi_a_pcc, d_phi_bc_pcc);
    Matrix d_phi_bc_ipm;
    c.ipm = ipm_loss(phi_bc, t, kind, d_phi_bc_ipm);
    c.reg = weight_regularizer_value(net);

    // d(objective)/d(rep), assembled column-block by column-block
    d_x_hat *= lw.beta;
    Matrix d_rep = net.decoder.backward(dec_caches, std::move(d_x_hat));

    for (std::size_t i = 0; i < rep.rows(); ++i) {
        double* dst = d_rep.row_ptr(i);
        const double* pa = d_phi_a_pcc.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            dst[j] += lw.gamma * pa[j];
        }
        const double* pb = d_phi_bc_pcc.row_ptr(i);
        const double* pi = d_phi_bc_ipm.row_ptr(i);
        for (std::size_t j = 0; j < rep_dim - m; ++j) {
            dst[m + j] += lw.gamma * pb[j] + lw.alpha * pi[j];
        }
    }

    if (!arms.control.empty()) {
        Matrix d_out0(arms.control.size(), 1);
        for (std::size_t k = 0; k < arms.control.size(); ++k) {
            d_out0.at(k, 0) = d_y_hat.at(arms.control[k], 0);
        }
        const Matrix d_in0 = net.head0.backward(head0_caches, std::move(d_out0));
        for (std::size_t k = 0; k < arms.control.size(); ++k) {
            double* dst = d_rep.row_ptr(arms.control[k]) + m;
            const double* src = d_in0.row_ptr(k);
            for (std::size_t j = 0; j < rep_dim - m; ++j) {
                dst[j] += src[j];
            }
        }
    }
    if (!arms.treated.empty()) {
        Matrix d_out1(arms.treated.size(), 1);
        for (std::size_t k = 0; k < arms.treated.size(); ++k) {
            d_out1.at(k, 0) = d_y_hat.at(arms.treated[k], 0);
        }
        const Matrix d_in1 = net.head1.backward(head1_caches, std::move(d_out1));
        for (std::size_t k = 0; k < arms.treated.size(); ++k) {
            double* dst = d_rep.row_ptr(arms.treated[k]) + m;
            const double* src = d_in1.row_ptr(k);
            for (std::size_t j = 0; j < rep_dim - m; ++j) {
                dst[j] += src[j];
            }
        }
    }

    net.encoder.backward(enc_caches, std::move(d_rep));
    weight_regularizer_grad(net, lw.lambda);
    return c;
}

double validation_objective(const RsbNet& net, const SplitData& valid_data, double train_u,
                            const TrainConfig& cfg) {
    const std::vector<double> w = sample_weights_for(valid_data.t, train_u);
    const Matrix y = Matrix::column(valid_data.y_f);
    const LossComponents c =
        compute_losses(net, valid_data.x, valid_data.t, y, w, cfg.ipm_kind);
    return total_loss(c, cfg.loss_weights);
}

TrainResult train(RsbNet& net, const SplitData& train_data, const SplitData& valid_data,
                  const TrainConfig& cfg, const HistorySink& sink) {
    cfg.validate();
    if (train_data.x.cols() != net.config.input_dim) {
        throw ConfigError("training features " + train_data.x.shape_str() +
                          " do not match network input_dim " +
                          std::to_string(net.config.input_dim));
    }
    if (cfg.batch_size > train_data.t.size()) {
        throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                          " exceeds the training split (" + std::to_string(train_data.t.size()) +
                          " rows)");
    }
    // weights are fixed from the full training split before iterating
    const SampleWeights sw = compute_sample_weights(train_data.t);
    {
        const auto treated =
            static_cast<std::size_t>(std::count(valid_data.t.begin(), valid_data.t.end(), 1));
        if (valid_data.t.empty() || treated == 0 || treated == valid_data.t.size()) {
            throw ContractError("validation split needs both treatment arms");
        }
    }

    const Matrix y_train = Matrix::column(train_data.y_f);
    Rng rng(cfg.seed);
    AdamConfig adam = cfg.adam;
    const std::vector<ParamTensor*> params = net.params();

    auto snapshot = [&params]() {
        std::vector<Matrix> vals;
        vals.reserve(params.size());
        for (const ParamTensor* p : params) {
            vals.push_back(p->value);
        }
        return vals;
    };

    TrainResult result;
    result.u = sw.u;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params = snapshot();
    std::size_t stalled = 0;

    for (std::size_t iter = 1; iter <= cfg.max_iterations; ++iter) {
        const std::vector<std::size_t> batch =
            sample_minibatch(train_data.t.size(), cfg.batch_size, train_data.t, rng);
        const Matrix xb = train_data.x.gather_rows(batch);
        const Matrix yb = y_train.gather_rows(batch);
        std::vector<int> tb(batch.size());
        std::vector<double> wb(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) {
            tb[k] = train_data.t[batch[k]];
            wb[k] = sw.w[batch[k]];
        }

        HistoryRecord record;
        record.iteration = iter;
        record.components =
            compute_losses_and_grads(net, xb, tb, yb, wb, cfg.loss_weights, cfg.ipm_kind);
        record.total = total_loss(record.components, cfg.loss_weights);
        if (!std::isfinite(record.total)) {
            throw TrainingDivergedError("non-finite loss at iteration " + std::to_string(iter) +
                                        " (pred=" + std::to_string(record.components.pred) +
                                        ", ipm=" + std::to_string(record.components.ipm) +
                                        ", recon=" + std::to_string(record.components.recon) +
                                        ", pcc=" + std::to_string(record.components.pcc) + ")");
        }
        adam_step(params, adam);
        result.iterations_done = iter;

        bool stop = false;
        if (iter % cfg.eval_interval == 0) {
            const double vobj = validation_objective(net, valid_data, sw.u, cfg);
            if (!std::isfinite(vobj)) {
                throw TrainingDivergedError("non-finite validation objective at iteration " +
                                            std::to_string(iter));
            }
            record.valid_objective = vobj;
            if (vobj < best) {
                best = vobj;
                best_params = snapshot();
                result.best_iteration = iter;
                stalled = 0;
            } else if (++stalled >= cfg.patience) {
                result.early_stopped = true;
                stop = true;
            }
        }
        if (sink) {
            sink(record);
        }
        if (stop) {
            break;
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = best_params[i];
    }
    result.best_valid_objective = best;
    return result;
}

} // namespace rsb
