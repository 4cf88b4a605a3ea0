#include "rsb/model.hpp"

#include <fstream>

#include <json.hpp>

#include "rsb/errors.hpp"

namespace rsb {

using nlohmann::json;

std::vector<std::size_t> NetworkConfig::resolved_decoder_layers() const {
    if (!decoder_layers.empty()) {
        return decoder_layers;
    }
    // mirror: hidden widths reversed, then back to the input dimension
    std::vector<std::size_t> widths;
    for (std::size_t i = encoder_layers.size() - 1; i-- > 0;) {
        widths.push_back(encoder_layers[i]);
    }
    widths.push_back(input_dim);
    return widths;
}

void NetworkConfig::validate() const {
    if (input_dim == 0) {
        throw ConfigError("network: input_dim must be >= 1");
    }
    if (rep_dim_a == 0 || rep_dim_bc == 0) {
        throw ConfigError("network: rep_dim_a and rep_dim_bc must be >= 1");
    }
    if (encoder_layers.empty()) {
        throw ConfigError("network: encoder needs at least one layer");
    }
    if (encoder_layers.back() != rep_dim()) {
        throw ConfigError("network: encoder output width " +
                          std::to_string(encoder_layers.back()) +
                          " != rep_dim_a + rep_dim_bc = " + std::to_string(rep_dim()));
    }
    const auto dec = resolved_decoder_layers();
    if (dec.empty() || dec.back() != input_dim) {
        throw ConfigError("network: decoder output width must equal input_dim " +
                          std::to_string(input_dim));
    }
}

namespace {

LayerStack build_stack(std::size_t in_dim, const std::vector<std::size_t>& widths,
                       ActivationKind act, bool identity_last, Rng& rng, double gain) {
    LayerStack stack;
    std::size_t prev = in_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const bool last = (i + 1 == widths.size());
        const ActivationKind layer_act =
            (last && identity_last) ? ActivationKind::identity : act;
        stack.layers.emplace_back(prev, widths[i], layer_act, rng, gain);
        prev = widths[i];
    }
    return stack;
}

std::vector<std::size_t> head_widths(const NetworkConfig& cfg) {
    std::vector<std::size_t> widths = cfg.head_layers;
    widths.push_back(1);
    return widths;
}

} // namespace

RsbNet::RsbNet(NetworkConfig cfg, Rng& rng) : config(std::move(cfg)) {
    config.validate();
    // construction order is part of the seeding contract
    encoder = build_stack(config.input_dim, config.encoder_layers, config.activation,
                          /*identity_last=*/false, rng, config.init_gain);
    decoder = build_stack(config.rep_dim(), config.resolved_decoder_layers(),
                          config.activation, /*identity_last=*/true, rng, config.init_gain);
    head0 = build_stack(config.rep_dim_bc, head_widths(config), config.activation,
                        /*identity_last=*/true, rng, config.init_gain);
    head1 = build_stack(config.rep_dim_bc, head_widths(config), config.activation,
                        /*identity_last=*/true, rng, config.init_gain);
}

void RsbNet::check_input(const Matrix& x) const {
    if (x.cols() != config.input_dim) {
        throw DimensionError("input has " + std::to_string(x.cols()) +
                             " features, network expects " + std::to_string(config.input_dim));
    }
}

std::pair<Matrix, Matrix> RsbNet::encode(const Matrix& x) const {
    check_input(x);
    const Matrix rep = encoder.forward(x);
    return {rep.slice_cols(0, config.rep_dim_a),
            rep.slice_cols(config.rep_dim_a, config.rep_dim())};
}

Matrix RsbNet::decode(const Matrix& phi_a, const Matrix& phi_bc) const {
    if (phi_a.cols() != config.rep_dim_a || phi_bc.cols() != config.rep_dim_bc) {
        throw DimensionError("decode: representation widths (" +
                             std::to_string(phi_a.cols()) + ", " +
                             std::to_string(phi_bc.cols()) + ") do not match config (" +
                             std::to_string(config.rep_dim_a) + ", " +
                             std::to_string(config.rep_dim_bc) + ")");
    }
    return decoder.forward(hcat(phi_a, phi_bc));
}

Matrix RsbNet::predict(const Matrix& phi_bc, int t) const {
    if (t != 0 && t != 1) {
        throw ContractError("predict: treatment must be 0 or 1, got " + std::to_string(t));
    }
    if (phi_bc.cols() != config.rep_dim_bc) {
        throw DimensionError("predict: representation width " + std::to_string(phi_bc.cols()) +
                             " != rep_dim_bc " + std::to_string(config.rep_dim_bc));
    }
    return (t == 1 ? head1 : head0).forward(phi_bc);
}

Matrix RsbNet::predict_ite(const Matrix& x) const {
    check_input(x);
    const Matrix rep = encoder.forward(x);
    const Matrix phi_bc = rep.slice_cols(config.rep_dim_a, config.rep_dim());
    Matrix tau = head1.forward(phi_bc);
    tau -= head0.forward(phi_bc);
    return tau;
}

std::vector<ParamTensor*> RsbNet::params() {
    std::vector<ParamTensor*> out;
    encoder.collect_params(out);
    decoder.collect_params(out);
    head0.collect_params(out);
    head1.collect_params(out);
    return out;
}

void RsbNet::zero_grads() {
    for (ParamTensor* p : params()) {
        p->zero_grad();
    }
}

std::size_t RsbNet::param_count() const {
    std::size_t n = 0;
    for (const auto* stack : {&encoder, &decoder, &head0, &head1}) {
        for (const auto& layer : stack->layers) {
            n += layer.w.value.size() + layer.b.value.size();
        }
    }
    return n;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const NetworkConfig& cfg) {
    return json{{"input_dim", cfg.input_dim},
                {"encoder_layers", cfg.encoder_layers},
                {"rep_dim_a", cfg.rep_dim_a},
                {"rep_dim_bc", cfg.rep_dim_bc},
                {"decoder_layers", cfg.decoder_layers},
                {"head_layers", cfg.head_layers},
                {"activation", activation_name(cfg.activation)},
                {"init_gain", cfg.init_gain}};
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.encoder_layers = j.at("encoder_layers").get<std::vector<std::size_t>>();
    cfg.rep_dim_a = j.at("rep_dim_a").get<std::size_t>();
    cfg.rep_dim_bc = j.at("rep_dim_bc").get<std::size_t>();
    cfg.decoder_layers = j.at("decoder_layers").get<std::vector<std::size_t>>();
    cfg.head_layers = j.at("head_layers").get<std::vector<std::size_t>>();
    cfg.activation = activation_from_name(j.at("activation").get<std::string>());
    cfg.init_gain = j.at("init_gain").get<double>();
    return cfg;
}

void stack_params_to_json(const LayerStack& stack, const std::string& prefix, json& out) {
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        const auto& layer = stack.layers[i];
        for (const auto& [tag, tensor] :
             {std::pair<const char*, const ParamTensor*>{"w", &layer.w}, {"b", &layer.b}}) {
            json entry;
            entry["shape"] = {tensor->value.rows(), tensor->value.cols()};
            entry["data"] = tensor->value.storage();
            out[prefix + "." + std::to_string(i) + "." + tag] = std::move(entry);
        }
    }
}

void stack_params_from_json(LayerStack& stack, const std::string& prefix, const json& in) {
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        auto& layer = stack.layers[i];
        for (const auto& [tag, tensor] :
             {std::pair<const char*, ParamTensor*>{"w", &layer.w}, {"b", &layer.b}}) {
            const std::string key = prefix + "." + std::to_string(i) + "." + tag;
            if (!in.contains(key)) {
                throw ParseError("checkpoint: missing tensor '" + key + "'");
            }
            const json& entry = in.at(key);
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            auto values = entry.at("data").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] != tensor->value.rows() ||
                shape[1] != tensor->value.cols()) {
                throw ParseError("checkpoint: tensor '" + key + "' shape mismatch");
            }
            tensor->value = Matrix(shape[0], shape[1], std::move(values));
        }
    }
}

} // namespace

std::string checkpoint_to_string(const RsbNet& net) {
    json doc;
    doc["format"] = "rsbnet-checkpoint-v1";
    doc["config"] = config_to_json(net.config);
    json params = json::object();
    stack_params_to_json(net.encoder, "encoder", params);
    stack_params_to_json(net.decoder, "decoder", params);
    stack_params_to_json(net.head0, "head0", params);
    stack_params_to_json(net.head1, "head1", params);
    doc["params"] = std::move(params);
    return doc.dump();
}

RsbNet checkpoint_from_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    if (doc.value("format", "") != "rsbnet-checkpoint-v1") {
        throw ParseError("checkpoint: unknown format tag");
    }
    Rng rng(0);  // structure only; every value is overwritten below
    RsbNet net(config_from_json(doc.at("config")), rng);
    const json& params = doc.at("params");
    stack_params_from_json(net.encoder, "encoder", params);
    stack_params_from_json(net.decoder, "decoder", params);
    stack_params_from_json(net.head0, "head0", params);
    stack_params_from_json(net.head1, "head1", params);
    return net;
}

void save_checkpoint(const RsbNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot open checkpoint file for writing: " + path);
    }
    out << checkpoint_to_string(net);
    out << '\n';
}

RsbNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open checkpoint file: " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return checkpoint_from_string(text);
}

} // namespace rsb
