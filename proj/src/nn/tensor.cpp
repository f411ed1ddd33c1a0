#include "sim/nn/tensor.hpp"

#include <sstream>

#include "sim/nn/autograd.hpp"

namespace sim::nn {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor() : node_(std::make_shared<Node>()) { node_->shape = {}; node_->value = {0.0}; }

Tensor::Tensor(NodePtr node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::vector<double> data(numel(shape), v);
    return from(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != data.size())
        throw TensorError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw TensorError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(data), requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= rank()) throw TensorError("dim " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[i];
}

std::span<double> Tensor::mutable_data() {
    if (!node_->inputs.empty() || node_->op != "leaf")
        throw TensorError("mutable access to non-leaf tensor produced by '" + node_->op + "'");
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1) throw TensorError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw TensorError("at(r,c) on tensor of rank " + std::to_string(rank()));
    return node_->value.at(r * node_->shape[1] + c);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

Tensor make_result(std::string op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->op = std::move(op);
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& t : inputs) n->inputs.push_back(t.node());
        n->backward = std::move(backward);
    }
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------

std::vector<double> Gradients::of(const Tensor& t) const {
    auto it = grads_.find(t.node().get());
    if (it == grads_.end()) return std::vector<double>(t.size(), 0.0);
    return it->second;
}

bool Gradients::contains(const Tensor& t) const { return grads_.count(t.node().get()) != 0; }

Tape::Tape(const Tensor& loss) : loss_(loss) {
    if (loss.size() != 1) throw TensorError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    // Iterative post-order DFS; inputs are visited in declaration order so
    // the resulting order is a deterministic function of the graph.
    std::unordered_map<const Node*, bool> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen[loss.node().get()] = true;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const NodePtr& child = node->inputs[next++];
            if (child->requires_grad && !seen[child.get()]) {
                seen[child.get()] = true;
                stack.emplace_back(child, 0);
            }
        } else {
            order_.push_back(node);
            stack.pop_back();
        }
    }
}

Gradients Tape::backward() const {
    Gradients g;
    if (order_.empty()) return g;
    g.grads_[order_.back().get()] = std::vector<double>(1, 1.0);
    std::vector<std::vector<double>*> slots;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        const Node& node = **it;
        if (!node.backward) continue;
        auto found = g.grads_.find(&node);
        if (found == g.grads_.end()) continue;
        slots.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const Node* in = node.inputs[k].get();
            if (!in->requires_grad) continue;
            auto& slot = g.grads_[in];
            if (slot.empty()) slot.assign(in->value.size(), 0.0);
            slots[k] = &slot;
        }
        // rehash in the loop above may have invalidated `found`
        const std::vector<double>& gout = g.grads_.at(&node);
        node.backward(node, gout, slots);
    }
    return g;
}

Gradients backward(const Tensor& loss) { return Tape(loss).backward(); }

} // namespace sim::nn
