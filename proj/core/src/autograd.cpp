#include "paratune/autograd.hpp"

#include <algorithm>

namespace paratune {

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const std::size_t id = params_.size();
  index_.emplace(name, id);
  Tensor grad(value.shape);
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
  return id;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

ParamStore ParamStore::filtered(const std::function<bool(const std::string&)>& keep) const {
  ParamStore out;
  for (const auto& p : params_) {
    if (keep(p.name)) out.add(p.name, p.value);
  }
  return out;
}

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(ParamStore& store, std::size_t index) {
  Parameter* p = &store[index];
  if (auto it = param_nodes_.find(p); it != param_nodes_.end()) return Var{this, it->second};
  nodes_.push_back(Node{{}, {}, true, p, {}});
  param_nodes_.emplace(p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](Var v) { return nodes_[v.id].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](Var v) { return nodes_[v.id].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  const Shape& shape = n.param != nullptr ? n.param->value.shape : n.value.shape;
  if (n.grad.shape != shape) n.grad = Tensor(shape);
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (value(scalar).size() != 1) {
    throw DimensionError("backward() requires a scalar, got " + shape_string(value(scalar).shape));
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor(n.param != nullptr ? n.param->value.shape : n.value.shape);
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[scalar.id].requires_grad) return;
  nodes_[scalar.id].grad.values[0] = 1.0;
  for (std::size_t i = scalar.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      auto& dst = n.param->grad.values;
      const auto& src = n.grad.values;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace paratune
