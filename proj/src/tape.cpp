#include "pyrhead/tape.hpp"

#include <cmath>

#include "pyrhead/errors.hpp"

namespace pyrhead::num {

ParameterSet::Slot ParameterSet::add(std::string name, Tensor value) {
  if (by_name_.contains(name)) throw ParameterError("duplicate parameter name: " + name);
  const Slot slot = params_.size();
  by_name_.emplace(name, slot);
  params_.push_back({std::move(name), std::move(value)});
  return slot;
}

std::optional<ParameterSet::Slot> ParameterSet::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Gradients zero_gradients(const ParameterSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Tensor::zeros_like(p.value));
  return g;
}

double gradient_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::param(ParameterSet::Slot slot) {
  if (params_ == nullptr) throw ContractError("tape has no parameter set");
  if (auto it = param_nodes_.find(slot); it != param_nodes_.end()) return {this, it->second};
  Var v = variable((*params_)[slot].value);
  param_nodes_.emplace(slot, v.id());
  return v;
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back({std::move(value), Tensor{}, requires_grad, std::move(fn)});
  return {this, id};
}

Tensor& Tape::grad_sink(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Tensor Tape::grad(NodeId id) const {
  const Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) return Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward() without seed needs a single-element root, got " +
                         shape_string(root.shape()));
  }
  backward(root, Tensor(root.shape(), 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  if (seed.shape() != root.shape()) throw DimensionError("backward seed shape mismatch");
  for (auto& n : nodes_) n.grad = Tensor{};
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = seed;
  for (NodeId id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.shape() != n.value.shape()) continue;
    n.backward(*this, id);
  }
}

Gradients Tape::parameter_grads() const {
  if (params_ == nullptr) return {};
  Gradients g = zero_gradients(*params_);
  accumulate_parameter_grads(g);
  return g;
}

void Tape::accumulate_parameter_grads(Gradients& into) const {
  if (params_ == nullptr) return;
  if (into.size() != params_->size()) throw DimensionError("gradient container does not match parameter set");
  for (const auto& [slot, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (n.grad.shape() == n.value.shape()) into[slot] += n.grad;
  }
}

}  // namespace pyrhead::num
