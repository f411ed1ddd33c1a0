#pragma once

#include <unordered_map>
#include <vector>

#include "sim/nn/tensor.hpp"

namespace sim::nn {

/// Gradient of a scalar loss with respect to every grad-requiring node that
/// the loss depends on.
class Gradients {
public:
    /// Gradient for t; zeros when t did not contribute to the loss.
    std::vector<double> of(const Tensor& t) const;
    bool contains(const Tensor& t) const;

private:
    friend class Tape;
    std::unordered_map<const Node*, std::vector<double>> grads_;
};

/// Topologically ordered record of the primitives a scalar loss was built
/// from. Backward is a pure function of the tape, so replaying it yields
/// bit-identical gradients.
class Tape {
public:
    explicit Tape(const Tensor& loss);

    Gradients backward() const;

    std::size_t size() const { return order_.size(); }
    const std::vector<NodePtr>& nodes() const { return order_; }

private:
    Tensor loss_;
    std::vector<NodePtr> order_;  // operands precede consumers
};

/// Convenience: Tape(loss).backward().
Gradients backward(const Tensor& loss);

} // namespace sim::nn
