#include "sim/nn/mlp.hpp"

#include <cmath>

#include "sim/nn/ops.hpp"

namespace sim::nn {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::silu: return "silu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

std::string to_string(TimeConditioning c) {
    switch (c) {
        case TimeConditioning::none: return "none";
        case TimeConditioning::log_t: return "log_t";
        case TimeConditioning::scaled_t: return "scaled_t";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

TimeConditioning conditioning_from_string(const std::string& s) {
    if (s == "none") return TimeConditioning::none;
    if (s == "log_t") return TimeConditioning::log_t;
    if (s == "scaled_t") return TimeConditioning::scaled_t;
    throw std::invalid_argument("unknown time conditioning '" + s + "'");
}

namespace {

std::size_t time_features(TimeConditioning c) { return c == TimeConditioning::none ? 0 : 1; }

Tensor activate(Activation a, const Tensor& x) {
    switch (a) {
        case Activation::relu: return relu(x);
        case Activation::silu: return silu(x);
        case Activation::tanh: return tanh(x);
    }
    return x;
}

} // namespace

MlpNet::MlpNet(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.widths.size() < 2) throw std::invalid_argument("MlpNet needs at least input and output widths");
    for (auto w : cfg_.widths)
        if (w == 0) throw std::invalid_argument("MlpNet: zero layer width");
    if (cfg_.conditioning == TimeConditioning::scaled_t && !(cfg_.time_scale > 0.0))
        throw std::invalid_argument("MlpNet: time_scale must be positive");
    const std::size_t layers = cfg_.widths.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = fan_in(l), out = cfg_.widths[l + 1];
        std::vector<double> w(in * out, 0.0);
        const bool zero = cfg_.zero_final && l + 1 == layers;
        if (!zero) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            for (auto& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
        }
        weights_.push_back(Tensor::from({in, out}, std::move(w), true));
        biases_.push_back(Tensor::zeros({out}, true));
    }
}

std::size_t MlpNet::fan_in(std::size_t layer) const {
    return layer == 0 ? cfg_.widths[0] + time_features(cfg_.conditioning) : cfg_.widths[layer];
}

Tensor MlpNet::forward(const Tensor& x, std::span<const double> t, bool track_params) const {
    if (x.rank() != 2 || x.dim(0) == 0)
        throw TensorError("MlpNet layer 0: expected input [B>=1, " + std::to_string(input_width()) + "], got " +
                          shape_str(x.shape()));
    if (x.dim(1) != input_width())
        throw TensorError("MlpNet layer 0: input width " + std::to_string(x.dim(1)) + " != " +
                          std::to_string(input_width()));
    const std::size_t batch = x.dim(0);
    Tensor h = x;
    if (cfg_.conditioning == TimeConditioning::none) {
        if (!t.empty()) throw TensorError("MlpNet: time input given to an unconditioned network");
    } else {
        if (t.size() != batch)
            throw TensorError("MlpNet layer 0: expected " + std::to_string(batch) + " times, got " +
                              std::to_string(t.size()));
        std::vector<double> feat(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            if (!(t[i] > 0.0)) throw TensorError("MlpNet: time must be strictly positive, got " + std::to_string(t[i]));
            feat[i] = cfg_.conditioning == TimeConditioning::log_t ? std::log(t[i]) : t[i] / cfg_.time_scale;
        }
        h = concat_cols(h, Tensor::from({batch, 1}, std::move(feat)));
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Tensor w = track_params ? weights_[l] : weights_[l].detach();
        const Tensor b = track_params ? biases_[l] : biases_[l].detach();
        if (h.dim(1) != w.dim(0))
            throw TensorError("MlpNet layer " + std::to_string(l) + ": input width " + std::to_string(h.dim(1)) +
                              " != fan-in " + std::to_string(w.dim(0)));
        h = affine(h, w, b);
        if (l + 1 < weights_.size()) h = activate(cfg_.activation, h);
    }
    return h;
}

std::vector<Tensor> MlpNet::parameters() const {
    std::vector<Tensor> p;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        p.push_back(weights_[l]);
        p.push_back(biases_[l]);
    }
    return p;
}

std::vector<std::string> MlpNet::parameter_names() const {
    std::vector<std::string> n;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        n.push_back("layer" + std::to_string(l) + ".weight");
        n.push_back("layer" + std::to_string(l) + ".bias");
    }
    return n;
}

std::size_t MlpNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
}

std::size_t MlpNet::parameter_count(const MlpConfig& cfg) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
        const std::size_t in = cfg.widths[l] + (l == 0 ? time_features(cfg.conditioning) : 0);
        n += (in + 1) * cfg.widths[l + 1];
    }
    return n;
}

MlpNet MlpNet::clone() const {
    MlpNet out;
    out.cfg_ = cfg_;
    for (const auto& w : weights_) out.weights_.push_back(w.clone(true));
    for (const auto& b : biases_) out.biases_.push_back(b.clone(true));
    return out;
}

void MlpNet::load_parameters(const std::vector<std::vector<double>>& values) {
    auto params = parameters();
    if (values.size() != params.size())
        throw std::invalid_argument("load_parameters: expected " + std::to_string(params.size()) + " tensors, got " +
                                    std::to_string(values.size()));
    auto names = parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (values[i].size() != params[i].size())
            throw std::invalid_argument("load_parameters: size mismatch for " + names[i]);
        auto dst = params[i].mutable_data();
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

} // namespace sim::nn
