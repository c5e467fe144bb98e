#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pali/numerics/params.hpp"
#include "pali/numerics/tensor.hpp"

namespace pali {

template <typename Scalar>
class Tape;
template <typename Scalar>
class GradStore;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations for reverse traversal. Single-threaded; one tape per
/// worker. Parameter leaves alias the ParamSet they were bound from, which
/// must outlive the tape.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using Inputs = std::vector<const TensorT*>;
  using ForwardFn = std::function<TensorT(const Inputs&)>;
  using BackwardFn = std::function<void(std::size_t self, GradStore<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value) {
    check_finite(value, "constant");
    return push(Node{std::make_shared<const TensorT>(std::move(value)), {}, {}, {}, false, {}});
  }

  /// Leaf for a named parameter; the tape keeps a non-owning view of `value`.
  Var<Scalar> parameter(const std::string& name, const TensorT& value, bool requires_grad = true) {
    check_finite(value, name);
    std::shared_ptr<const TensorT> view(std::shared_ptr<const TensorT>{}, &value);
    return push(Node{std::move(view), {}, {}, {}, requires_grad, name});
  }

  /// Leaf for a named parameter that owns its value.
  Var<Scalar> parameter_copy(const std::string& name, TensorT value, bool requires_grad = true) {
    check_finite(value, name);
    return push(Node{std::make_shared<const TensorT>(std::move(value)), {}, {}, {}, requires_grad, name});
  }

  /// Runs `forward` on the inputs, records the result and its pullback.
  Var<Scalar> record(const char* op, std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward) {
    Inputs in;
    in.reserve(inputs.size());
    bool needs_grad = false;
    for (auto id : inputs) {
      in.push_back(nodes_.at(id).value.get());
      needs_grad = needs_grad || nodes_[id].requires_grad;
    }
    TensorT out = forward(in);
    check_finite(out, op);
    Node node{std::make_shared<const TensorT>(std::move(out)), std::move(inputs), std::move(forward), {}, needs_grad, {}};
    if (needs_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const TensorT& value(std::size_t id) const { return *nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& param_name(std::size_t id) const { return nodes_.at(id).param_name; }
  bool is_parameter(std::size_t id) const { return !nodes_.at(id).param_name.empty(); }
  std::size_t size() const { return nodes_.size(); }

  /// Recomputes every non-leaf node from its recorded inputs.
  std::vector<TensorT> replay() const {
    std::vector<TensorT> out;
    out.reserve(nodes_.size());
    for (const auto& node : nodes_) {
      if (!node.forward) {
        out.push_back(*node.value);
        continue;
      }
      Inputs in;
      in.reserve(node.inputs.size());
      for (auto id : node.inputs) in.push_back(&out[id]);
      out.push_back(node.forward(in));
    }
    return out;
  }

 private:
  friend class GradStore<Scalar>;
  template <typename S>
  friend GradientMap<S> backward(const Var<S>& loss);

  struct Node {
    std::shared_ptr<const TensorT> value;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  static void check_finite(const TensorT& t, const std::string& op) {
    if (!t.all_finite()) throw NumericError(op + ": non-finite value");
  }

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

/// Gradient buffers filled during a reverse sweep.
template <typename Scalar>
class GradStore {
 public:
  using TensorT = Tensor<Scalar>;

  explicit GradStore(const Tape<Scalar>& tape) : tape_(tape), grads_(tape.size()) {}

  const TensorT& value(std::size_t id) const { return tape_.value(id); }
  bool requires_grad(std::size_t id) const { return tape_.requires_grad(id); }
  bool has_grad(std::size_t id) const { return !grads_[id].is_null(); }
  const TensorT& grad(std::size_t id) const { return grads_[id]; }

  /// Gradient buffer of `id`, zero-initialized on first use.
  TensorT& accumulate(std::size_t id) {
    if (grads_[id].is_null()) grads_[id] = TensorT::zeros(tape_.value(id).shape());
    return grads_[id];
  }

  TensorT take(std::size_t id) { return std::move(grads_[id]); }

 private:
  const Tape<Scalar>& tape_;
  std::vector<TensorT> grads_;
};

/// Reverse sweep from a scalar loss. Returns a gradient for every parameter
/// leaf on the tape; leaves not reached by the loss get zeros.
template <typename Scalar>
GradientMap<Scalar> backward(const Var<Scalar>& loss) {
  if (!loss.valid()) throw std::invalid_argument("backward: loss is not on a tape");
  const Tape<Scalar>& tape = loss.tape();
  if (loss.id() >= tape.size()) throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.value().shape()));
  }
  GradStore<Scalar> store(tape);
  if (tape.requires_grad(loss.id())) {
    store.accumulate(loss.id()).vec().setOnes();
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      const auto& node = tape.nodes_[i];
      if (node.backward && store.has_grad(i)) node.backward(i, store);
    }
  }
  GradientMap<Scalar> grads;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& node = tape.nodes_[i];
    if (node.param_name.empty()) continue;
    Tensor<Scalar> g = store.has_grad(i) ? store.take(i) : Tensor<Scalar>::zeros(node.value->shape());
    auto it = grads.find(node.param_name);
    if (it == grads.end()) {
      grads.emplace(node.param_name, std::move(g));
    } else {
      // same parameter bound twice
      it->second.vec() += g.vec();
    }
  }
  return grads;
}

/// Binds a ParamSet onto a tape on first use. Parameters matching a frozen
/// prefix, or marked non-trainable, enter as leaves that do not require grad.
template <typename Scalar>
class Graph {
 public:
  Graph(Tape<Scalar>& tape, const ParamSet<Scalar>& params, std::vector<std::string> frozen_prefixes = {})
      : tape_(tape), params_(params), frozen_(std::move(frozen_prefixes)) {}

  Var<Scalar> operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& p = params_.at(name);
    bool trainable = p.trainable && !matches_any_prefix(name, frozen_);
    Var<Scalar> v = tape_.parameter(name, p.value, trainable);
    bound_.emplace(name, v);
    return v;
  }

  Var<Scalar> constant(Tensor<Scalar> t) { return tape_.constant(std::move(t)); }
  Tape<Scalar>& tape() { return tape_; }
  const ParamSet<Scalar>& params() const { return params_; }

 private:
  Tape<Scalar>& tape_;
  const ParamSet<Scalar>& params_;
  std::vector<std::string> frozen_;
  std::map<std::string, Var<Scalar>> bound_;
};

}  // namespace pali
