#include "sim/nn/adam.hpp"

#include <cmath>

namespace sim::nn {

Adam::Adam(std::vector<Tensor> params, std::vector<std::string> names, AdamConfig cfg)
    : params_(std::move(params)), names_(std::move(names)), cfg_(cfg) {
    if (names_.size() != params_.size()) throw std::invalid_argument("Adam: one name per parameter required");
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
        throw std::invalid_argument("Adam: betas must lie in [0, 1)");
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step(const Gradients& grads) {
    std::vector<std::vector<double>> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(grads.of(p));
    step(g);
}

void Adam::step(const std::vector<std::vector<double>>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam: gradient count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (grads[i].size() != params_[i].size())
            throw std::invalid_argument("Adam: gradient shape mismatch for " + names_[i]);
        for (double g : grads[i])
            if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient for parameter " + names_[i]);
    }
    ++steps_;
    const double k = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(cfg_.beta1, k);
    const double c2 = 1.0 - std::pow(cfg_.beta2, k);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].mutable_data();
        auto& m = m_[i];
        auto& v = v_[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mh = m[j] / c1;
            const double vh = v[j] / c2;
            w[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

} // namespace sim::nn
