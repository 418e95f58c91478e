#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "shunted/tensor.hpp"

namespace shunted {

/// Named trainable tensor with a persistent gradient accumulator.
template <class S>
struct Parameter {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;        // always same shape as value, zero-initialized
  bool decay = true;      // false for biases / norm affine params

  Parameter() = default;
  Parameter(std::string n, TensorT<S> v, bool decay_flag = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(decay_flag) {}
};

/// Flat parameter registry with unique names; layers hold indices into it.
template <class S>
class ParamStore {
 public:
  int add(std::string name, TensorT<S> value, bool decay = true) {
    if (index_.count(name))
      throw ConfigError("duplicate parameter name: " + name);
    int id = static_cast<int>(params_.size());
    index_.emplace(name, id);
    params_.emplace_back(std::move(name), std::move(value), decay);
    return id;
  }

  Parameter<S>& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
  const Parameter<S>& operator[](int id) const {
    return params_[static_cast<std::size_t>(id)];
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t size() const { return params_.size(); }
  std::vector<Parameter<S>>& all() { return params_; }
  const std::vector<Parameter<S>>& all() const { return params_; }

  void zero_grads() {
    for (auto& p : params_) p.grad.set_zero();
  }

  long total_elements() const {
    long n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  /// Precision conversion for the whole store (explicit, like tensor cast).
  template <class To>
  ParamStore<To> casted() const {
    ParamStore<To> out;
    for (const auto& p : params_) out.add(p.name, cast<To>(p.value), p.decay);
    return out;
  }

 private:
  std::vector<Parameter<S>> params_;
  std::unordered_map<std::string, int> index_;
};

template <class S>
class GraphT;

/// Lightweight handle to a tape node.
template <class S>
struct VarT {
  GraphT<S>* g = nullptr;
  int id = -1;

  const TensorT<S>& val() const { return g->value(id); }
  const std::vector<long>& shape() const { return g->value(id).shape(); }
  long dim(long i) const { return g->value(id).dim(i); }
  long ndim() const { return g->value(id).ndim(); }
};

/// Reverse-mode tape. Operations append nodes in topological order;
/// backward() sweeps the tape in reverse, accumulating gradients into
/// Parameter.grad for every parameter leaf. Transient node gradients are
/// reset at the start of each backward pass, parameter gradients are not —
/// running backward twice therefore doubles every parameter gradient.
template <class S>
class GraphT {
 public:
  explicit GraphT(ParamStore<S>* store = nullptr) : store_(store) {}

  /// Non-parameter leaf (input data, constants).
  VarT<S> leaf(TensorT<S> v) {
    return push(std::move(v), nullptr, -1);
  }

  /// Parameter leaf; memoized so one parameter maps to one node per graph.
  VarT<S> param(int param_id) {
    if (!store_) throw ConfigError("graph has no parameter store");
    auto it = param_nodes_.find(param_id);
    if (it != param_nodes_.end()) return {this, it->second};
    VarT<S> v = push(TensorT<S>(store_->operator[](param_id).value), nullptr, param_id);
    param_nodes_.emplace(param_id, v.id);
    return v;
  }

  /// New interior node. The backward closure receives the graph and may call
  /// grad_of(self) / value(i) / grad_buffer(i).
  VarT<S> make(TensorT<S> value, std::function<void(GraphT&, int)> back) {
    VarT<S> v = push(std::move(value), std::move(back), -1);
    return v;
  }

  const TensorT<S>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Gradient buffer for a node, allocated (zeroed) on first use. For
  /// parameter leaves this is the parameter's persistent grad tensor.
  TensorT<S>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param_id >= 0) {
      n.touched = true;
      return store_->operator[](n.param_id).grad;
    }
    if (n.grad.shape() != n.value.shape()) n.grad = TensorT<S>(n.value.shape());
    n.touched = true;
    return n.grad;
  }

  const TensorT<S>& grad_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param_id >= 0) return store_->operator[](n.param_id).grad;
    return n.grad;
  }

  bool touched(int id) const { return nodes_[static_cast<std::size_t>(id)].touched; }

  /// Reverse sweep from a scalar loss. Accumulates into Parameter.grad.
  void backward(VarT<S> loss) {
    if (loss.g != this) throw ConfigError("backward: node belongs to another graph");
    if (value(loss.id).numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_to_string(value(loss.id).shape()));
    // Reset transient state; parameter grads persist (accumulation semantics).
    for (auto& n : nodes_) {
      n.touched = false;
      if (n.param_id < 0 && n.grad.shape() == n.value.shape()) n.grad.set_zero();
    }
    grad_buffer(loss.id)[0] = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.touched && n.back) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  ParamStore<S>* store() { return store_; }

 private:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad;  // unused for parameter leaves
    std::function<void(GraphT&, int)> back;
    int param_id = -1;
    bool touched = false;
  };

  VarT<S> push(TensorT<S> value, std::function<void(GraphT&, int)> back, int param_id) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    n.param_id = param_id;
    n.grad = TensorT<S>({0});  // empty placeholder
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  ParamStore<S>* store_;
  std::unordered_map<int, int> param_nodes_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;
using Var = VarT<float>;
using Var64 = VarT<double>;

}  // namespace shunted
