#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sim::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for malformed tensor operations (shape mismatch, domain errors).
class TensorError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Accumulates the vector-Jacobian product of one primitive into the
/// gradients of its inputs. grad_in[k] is null when input k needs no gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

struct Node {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<NodePtr> inputs;
    BackwardFn backward;
};

/// Dense row-major f64 array. Copies share the underlying node; use clone()
/// for an independent copy. Operations on tensors that require a gradient
/// record themselves into the graph consumed by Tape.
class Tensor {
public:
    Tensor();
    explicit Tensor(NodePtr node);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    /// 2-D tensor from nested rows.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->value; }
    /// Mutable access is restricted to leaves (parameters, inputs).
    std::span<double> mutable_data();

    double item() const;
    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t r, std::size_t c) const;

    const std::string& op() const { return node_->op; }
    const NodePtr& node() const { return node_; }

    /// Constant leaf carrying the same values (stop-gradient).
    Tensor detach() const;
    /// Independent leaf copy with the given grad flag.
    Tensor clone(bool requires_grad) const;

private:
    NodePtr node_;
};

/// Builds the result node of a primitive. If no input requires a gradient the
/// node is a constant and the backward closure is dropped.
Tensor make_result(std::string op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

} // namespace sim::nn
