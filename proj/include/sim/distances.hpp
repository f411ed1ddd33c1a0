#pragma once

// Distance family used by the score-divergence: value d(y) and gradient
// d'(y) for a single vector y, plus a differentiable row-wise gradient for
// batches of y.

#include <span>
#include <string>
#include <vector>

#include "sim/nn/tensor.hpp"

namespace sim::distances {

struct DistanceFn {
    enum class Kind { l2, power, exp_power, l1, huber, pseudo_huber };
    Kind kind = Kind::l2;
    int alpha = 2;       // power, exp_power: even, >= 2
    double beta = 1.0;   // exp_power
    double delta = 1.0;  // huber
    double c = 1.0;      // pseudo_huber

    static DistanceFn l2();
    static DistanceFn power(int alpha);
    static DistanceFn exp_power(int alpha, double beta);
    static DistanceFn l1();
    static DistanceFn huber(double delta);
    static DistanceFn pseudo_huber(double c);
    /// Pseudo-Huber with c = 0.1 * sqrt(dim).
    static DistanceFn pseudo_huber_for_dim(std::size_t dim);

    void validate() const;
    std::string name() const;
};

std::string to_string(DistanceFn::Kind k);
DistanceFn::Kind distance_kind_from_string(const std::string& s);

/// l2: |y|_2^2; power: |y|_a^a; exp_power: exp(b |y|_a^a) - 1; l1: |y|_1;
/// huber: sum of per-coordinate Huber; pseudo_huber: sqrt(|y|^2 + c^2) - c.
double value(const DistanceFn& d, std::span<const double> y);

/// Gradient of value() in y. Kinks use the subgradient sign(0) = 0. The
/// pseudo_huber gradient is y / sqrt(|y|^2 + c^2) exactly (no extra factor).
std::vector<double> derivative(const DistanceFn& d, std::span<const double> y);

/// Row-wise derivative of a [B,D] batch built from differentiable
/// primitives, so gradients flow back into y.
nn::Tensor derivative(const DistanceFn& d, const nn::Tensor& y);

} // namespace sim::distances
