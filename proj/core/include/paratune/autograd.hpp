#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "paratune/tensor.hpp"

namespace paratune {

/// A named learnable array and its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered collection of named parameters. Indices are stable for the lifetime of the
/// store and survive copies, so a copied store is an independent model.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& get(const std::string& name) { return params_[index(name)]; }
  const Parameter& get(const std::string& name) const { return params_[index(name)]; }

  std::size_t size() const { return params_.size(); }
  /// Total number of scalar weights.
  std::size_t numel() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Keep only parameters whose name satisfies the predicate.
  ParamStore filtered(const std::function<bool(const std::string&)>& keep) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
};

/// Records executed operations so their adjoints can be replayed in reverse order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Differentiable leaf owned by the tape (gradient readable through grad()).
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into Parameter::grad.
  /// The store must outlive the tape and must not grow while the tape is alive.
  Var param(ParamStore& store, std::size_t index);
  Var param(ParamStore& store, const std::string& name) { return param(store, store.index(name)); }

  /// Append an operation result. `inputs` decides whether the node requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  /// Accumulation buffer used by adjoint closures.
  Tensor& grad_buffer(std::size_t id);

  /// Reverse sweep from a scalar. Clears internal gradients first, so calling it twice
  /// reproduces the same tape gradients; parameter gradients accumulate on each call.
  void backward(Var scalar);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  // References to recorded values stay valid while the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace paratune
