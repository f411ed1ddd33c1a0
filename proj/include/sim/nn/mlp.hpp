#pragma once

#include <span>
#include <string>
#include <vector>

#include "sim/nn/tensor.hpp"
#include "sim/rng.hpp"

namespace sim::nn {

enum class Activation { relu, silu, tanh };
/// How the time input enters the network: not at all, as an extra log(t)
/// feature, or as an extra t/time_scale feature.
enum class TimeConditioning { none, log_t, scaled_t };

std::string to_string(Activation a);
std::string to_string(TimeConditioning c);
Activation activation_from_string(const std::string& s);
TimeConditioning conditioning_from_string(const std::string& s);

struct MlpConfig {
    /// Data widths: widths.front() is the data input, widths.back() the output.
    /// The time feature (if any) is appended to the first layer's fan-in.
    std::vector<std::size_t> widths;
    Activation activation = Activation::silu;
    TimeConditioning conditioning = TimeConditioning::none;
    double time_scale = 80.0;
    bool zero_final = false;
};

/// Feed-forward network: affine layers with the activation between them
/// (none after the last). Weights are stored [fan_in, fan_out].
class MlpNet {
public:
    MlpNet() = default;
    /// Weights ~ U(+-1/sqrt(fan_in)), biases zero; final layer zero when
    /// cfg.zero_final.
    MlpNet(MlpConfig cfg, Rng& rng);

    /// x: [B, widths.front()]; t: one time per row, required iff conditioned.
    /// With track_params=false the parameters enter as constants, so
    /// gradients flow to x only.
    Tensor forward(const Tensor& x, std::span<const double> t = {}, bool track_params = true) const;

    const MlpConfig& config() const { return cfg_; }
    std::size_t input_width() const { return cfg_.widths.front(); }
    std::size_t output_width() const { return cfg_.widths.back(); }
    std::size_t num_layers() const { return weights_.size(); }

    /// Weights then bias per layer: layer0.weight, layer0.bias, ...
    std::vector<Tensor> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    static std::size_t parameter_count(const MlpConfig& cfg);

    /// Deep copy with independent parameter storage.
    MlpNet clone() const;
    /// Overwrite parameter values from a flat list in parameters() order.
    void load_parameters(const std::vector<std::vector<double>>& values);

private:
    std::size_t fan_in(std::size_t layer) const;

    MlpConfig cfg_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

} // namespace sim::nn
