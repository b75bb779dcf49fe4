#pragma once

#include "mfrflow/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mfrflow {

/// A trainable tensor together with its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor<Scalar>::zeros(value.shape())) {}

  void zero_grad() { grad = Tensor<Scalar>::zeros(value.shape()); }
};

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Gradient after Tape::backward; zeros if no gradient reached this node.
  Tensor<Scalar> grad() const { return tape_->gradient(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recorder. Each operation appends a node holding its value and
/// a closure that maps the node's output gradient onto its parents. Backward
/// walks nodes in reverse recording order, which fixes the reduction order.
template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Scalar>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient can be read back after backward().
  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, {}); }

  /// Leaf bound to a Parameter; backward() accumulates into parameter.grad.
  /// Binding the same parameter twice returns the same node.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<Scalar>(this, it->second);
    Var<Scalar> v = push(p.value, p.trainable, {});
    bound_.emplace(&p, v.id());
    params_.push_back({&p, v.id()});
    return v;
  }

  /// Records an op output. The closure runs only if some parent needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                     Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p.id());
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }
  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& parents,
                     Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p.id());
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for a parent; nullptr when the parent needs none.
  Tensor<Scalar>* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad = Tensor<Scalar>::zeros(n.value.shape());
    return &*n.grad;
  }

  void accumulate(std::size_t id, const Tensor<Scalar>& g) {
    if (Tensor<Scalar>* buf = grad_buffer(id)) buf->array() += g.array();
  }

  Tensor<Scalar> gradient(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad ? *n.grad : Tensor<Scalar>::zeros(n.value.shape());
  }

  /// When enabled, piecewise operations (relu, bilinear footprints) fold the
  /// branch they took into a running fingerprint. Two evaluations with equal
  /// fingerprints ran through the same smooth piece.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void mix_branch(std::uint64_t v) { branch_signature_ = (branch_signature_ ^ v) * 0x100000001b3ULL; }
  std::uint64_t branch_signature() const { return branch_signature_; }

  /// Seeds d(root)/d(root) = 1 and propagates. Parameter gradients are added
  /// to Parameter::grad.
  void backward(const Var<Scalar>& root) {
    if (root.value().size() != 1) throw ShapeError("backward requires a scalar root");
    if (!requires_grad(root.id())) return;
    *grad_buffer(root.id()) = Tensor<Scalar>::constant(root.shape(), Scalar(1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      n.backward(*this, *n.grad);
    }
    for (const auto& [param, id] : params_) {
      const Node& n = nodes_[id];
      if (n.grad) param->grad.array() += n.grad->array();
    }
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor<Scalar>> grad;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(value), needs, std::move(fn), std::nullopt});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  // deque keeps references to node values stable while the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, std::size_t> bound_;
  std::vector<std::pair<Parameter<Scalar>*, std::size_t>> params_;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
};

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
  return x.tape().constant(x.value());
}

}  // namespace mfrflow
