#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pyrhead/tensor.hpp"

namespace pyrhead::num {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, name-addressable collection of learnable tensors. Slots are
/// stable indices; gradient containers are aligned with them.
class ParameterSet {
 public:
  using Slot = std::size_t;

  Slot add(std::string name, Tensor value);
  std::optional<Slot> find(const std::string& name) const;

  Parameter& operator[](Slot s) { return params_.at(s); }
  const Parameter& operator[](Slot s) const { return params_.at(s); }
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, Slot> by_name_;
};

/// One gradient tensor per parameter slot.
using Gradients = std::vector<Tensor>;

Gradients zero_gradients(const ParameterSet& params);
double gradient_norm(const Gradients& grads);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after Tape::backward; zeros when the node was not reached.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode recording. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid topological order for backward.
/// Single writer; distinct tapes may be used from distinct threads.
class Tape {
 public:
  using NodeId = std::uint32_t;
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  explicit Tape(const ParameterSet* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  /// Leaf bound to a parameter slot. Repeated calls return the same node.
  Var param(ParameterSet::Slot slot);
  const ParameterSet* parameters() const { return params_; }

  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Tensor grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Gradients parameter_grads() const;
  void accumulate_parameter_grads(Gradients& into) const;

  /// Records an op result. `fn` runs during backward with the output
  /// gradient available through out_grad(); it must be null when no input
  /// requires a gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);
  const Tensor& out_grad(NodeId id) const { return nodes_[id].grad; }
  /// Gradient buffer of an input node, zero-materialized on first touch.
  Tensor& grad_sink(NodeId id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::unordered_map<ParameterSet::Slot, NodeId> param_nodes_;
};

}  // namespace pyrhead::num
