#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sim/nn/autograd.hpp"
#include "sim/nn/tensor.hpp"

namespace sim::nn {

/// Raised when a gradient or loss turns non-finite; the message names the
/// offending quantity.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.0;  // first-moment decay
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of leaf parameters.
class Adam {
public:
    Adam(std::vector<Tensor> params, std::vector<std::string> names, AdamConfig cfg);

    void step(const Gradients& grads);
    void step(const std::vector<std::vector<double>>& grads);

    std::uint64_t steps() const { return steps_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t steps_ = 0;
};

} // namespace sim::nn
