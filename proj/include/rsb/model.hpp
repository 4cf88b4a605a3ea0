#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rsb/nn.hpp"

namespace rsb {

/// Architecture description. The encoder's last width must equal
/// rep_dim_a + rep_dim_bc; the split of the representation is positional
/// (first rep_dim_a columns are the bias-only block).
struct NetworkConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> encoder_layers = {200, 200, 200};
    std::size_t rep_dim_a = 50;
    std::size_t rep_dim_bc = 150;
    /// Empty means mirror the encoder's hidden widths back to input_dim.
    std::vector<std::size_t> decoder_layers = {};
    /// Hidden widths of each outcome head; a final width-1 linear layer is
    /// appended automatically.
    std::vector<std::size_t> head_layers = {100, 100, 100};
    ActivationKind activation = ActivationKind::elu;
    double init_gain = 0.1;

    std::size_t rep_dim() const { return rep_dim_a + rep_dim_bc; }
    std::vector<std::size_t> resolved_decoder_layers() const;
    void validate() const;
};

/// Autoencoder with a positionally split representation and two
/// treatment-specific outcome heads. The heads consume only the second
/// (outcome-relevant) representation block; the first block is reachable
/// only from the decoder and the decorrelation loss.
struct RsbNet {
    NetworkConfig config;
    LayerStack encoder;
    LayerStack decoder;
    LayerStack head0;
    LayerStack head1;

    RsbNet() = default;
    RsbNet(NetworkConfig cfg, Rng& rng);

    /// Forward through the encoder; returns (phi_a, phi_bc).
    std::pair<Matrix, Matrix> encode(const Matrix& x) const;
    /// Reconstruction from the concatenated representation.
    Matrix decode(const Matrix& phi_a, const Matrix& phi_bc) const;
    /// Outcome prediction for treatment t in {0, 1}.
    Matrix predict(const Matrix& phi_bc, int t) const;
    /// h1(phi_bc) - h0(phi_bc) from one shared encoder pass.
    Matrix predict_ite(const Matrix& x) const;

    std::vector<ParamTensor*> params();
    void zero_grads();
    std::size_t param_count() const;

    void check_input(const Matrix& x) const;
};

/// Checkpoint document: NetworkConfig plus layer-name -> {shape, row-major
/// values}; round-trips bitwise (doubles serialized shortest-round-trip).
std::string checkpoint_to_string(const RsbNet& net);
RsbNet checkpoint_from_string(const std::string& text);
void save_checkpoint(const RsbNet& net, const std::string& path);
RsbNet load_checkpoint(const std::string& path);

} // namespace rsb
