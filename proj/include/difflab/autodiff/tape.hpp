#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "difflab/tensor.hpp"

namespace difflab::ad {

using NodeId = std::int64_t;
using ParamId = std::int64_t;

/// A differentiable operation: forward kernel plus its per-argument
/// vector-Jacobian product and its forward-mode (tangent) rule.
///
/// The VJP and JVP are written independently of each other so that the
/// adjoint identity <v, J u> == <J^T v, u> is a genuine cross-check.
class Primitive {
 public:
  virtual ~Primitive() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor forward(std::span<const Tensor> inputs) const = 0;
  /// Adjoint of input `arg` given the adjoint of the output.
  virtual Tensor vjp(std::span<const Tensor> inputs, const Tensor& output, const Tensor& adjoint,
                     std::size_t arg) const = 0;
  /// Output tangent given one tangent per input (zeros for constants).
  virtual Tensor jvp(std::span<const Tensor> inputs, const Tensor& output,
                     std::span<const Tensor> tangents) const = 0;
};

using PrimitivePtr = std::shared_ptr<const Primitive>;

/// Trainable tensor with a process-unique id used as the gradient key.
class Parameter {
 public:
  Parameter() : id_(next_id()) {}
  Parameter(std::string name, Tensor value, bool trainable = true)
      : name_(std::move(name)), value_(std::move(value)), trainable_(trainable), id_(next_id()) {}

  // Copies are new parameters with fresh ids.
  Parameter(const Parameter& other)
      : name_(other.name_), value_(other.value_), trainable_(other.trainable_), id_(next_id()) {}
  Parameter& operator=(const Parameter& other) {
    name_ = other.name_;
    value_ = other.value_;
    trainable_ = other.trainable_;
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Tensor& value() const { return value_; }
  Tensor& value() { return value_; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool t) { trainable_ = t; }
  ParamId id() const { return id_; }
  const Shape& shape() const { return value_.shape(); }

 private:
  static ParamId next_id() {
    static std::atomic<ParamId> counter{0};
    return counter++;
  }

  std::string name_;
  Tensor value_;
  bool trainable_ = true;
  ParamId id_;
};

struct TapeNode {
  NodeId id = 0;
  Tensor output;
  std::vector<NodeId> parents;
  PrimitivePtr primitive;            // null for leaves
  std::optional<ParamId> param;      // set for parameter leaves
  bool requires_grad = false;
};

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = -1;
};

/// Wengert list. Node ids increase monotonically and parents always precede
/// children, so reverse id order is a valid reverse topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives an adjoint (retrievable through GradientStore::wrt).
  Var input(Tensor value);
  /// Leaf bound to a parameter; repeated calls for the same parameter reuse one node.
  Var param(const Parameter& p);

  /// Runs the primitive's forward kernel and appends the node.
  Var record(const PrimitivePtr& primitive, std::initializer_list<Var> inputs);
  Var record(const PrimitivePtr& primitive, std::span<const Var> inputs);

  const TapeNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  std::size_t primitive_count() const;

 private:
  Var push_leaf(Tensor value, bool requires_grad, std::optional<ParamId> param);

  std::deque<TapeNode> nodes_;
  std::unordered_map<ParamId, NodeId> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).output; }

/// Accumulated gradients keyed by parameter id, plus adjoints of input leaves.
class GradientStore {
 public:
  void accumulate(ParamId id, const Tensor& g);
  void accumulate_leaf(NodeId id, const Tensor& g);

  bool contains(const Parameter& p) const { return by_param_.contains(p.id()); }
  /// Gradient of a parameter; zeros-free lookup throws if absent.
  const Tensor& operator[](const Parameter& p) const;
  const Tensor& get(ParamId id) const;
  /// Adjoint reaching an input leaf (zeros if none reached it).
  Tensor wrt(const Var& v) const;

  /// Additive merge of another store (independent tapes).
  void merge(const GradientStore& other);
  void scale(double factor);
  double global_norm() const;

  const std::map<ParamId, Tensor>& params() const { return by_param_; }
  std::map<ParamId, Tensor>& params() { return by_param_; }

 private:
  std::map<ParamId, Tensor> by_param_;
  std::map<NodeId, Tensor> by_leaf_;
  std::map<NodeId, Shape> leaf_shapes_;
  friend GradientStore backward_from(const Tape&, const Var&, const Tensor&);
};

/// Reverse pass from a scalar loss seeded with 1. Parameters on the tape that
/// the loss does not reach receive zero gradients.
GradientStore backward(const Tape& tape, const Var& loss);

/// Reverse pass with an arbitrary output seed (vector-output VJP).
GradientStore backward_from(const Tape& tape, const Var& output, const Tensor& seed);

/// Forward-mode tangent propagation over a recorded tape. `seeds` maps leaf
/// node ids to tangents; everything else starts at zero.
Tensor forward_tangent(const Tape& tape, const Var& output, const std::map<NodeId, Tensor>& seeds);

using UnaryFn = std::function<Var(Var)>;

/// v^T df(x) without materializing the Jacobian.
Tensor vjp(const UnaryFn& f, const Tensor& x, const Tensor& v);
/// df(x) u by dual propagation through per-primitive tangent rules.
Tensor jvp(const UnaryFn& f, const Tensor& x, const Tensor& u);

// ---------------------------------------------------------------------------
// Registry

/// Known primitive names. record() refuses primitives that were never registered.
class Registry {
 public:
  static Registry& global();

  void add(std::string name);
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<std::string> names_;
};

}  // namespace difflab::ad
