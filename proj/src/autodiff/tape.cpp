#include "difflab/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "difflab/kernels.hpp"
#include "registry_init.hpp"

namespace difflab::ad {

Var Tape::push_leaf(Tensor value, bool requires_grad, std::optional<ParamId> param) {
  TapeNode node;
  node.id = static_cast<NodeId>(nodes_.size());
  node.output = std::move(value);
  node.requires_grad = requires_grad;
  node.param = param;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.back().id);
}

Var Tape::constant(Tensor value) { return push_leaf(std::move(value), false, std::nullopt); }

Var Tape::input(Tensor value) { return push_leaf(std::move(value), true, std::nullopt); }

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(p.id()); it != param_nodes_.end()) return Var(this, it->second);
  Var v = push_leaf(p.value(), p.trainable(), p.id());
  param_nodes_.emplace(p.id(), v.id());
  return v;
}

Var Tape::record(const PrimitivePtr& primitive, std::initializer_list<Var> inputs) {
  return record(primitive, std::span<const Var>(inputs.begin(), inputs.size()));
}

Var Tape::record(const PrimitivePtr& primitive, std::span<const Var> inputs) {
  if (!primitive || !Registry::global().contains(primitive->name()))
    throw RegistryError("primitive '" + std::string(primitive ? primitive->name() : "<null>") + "' is not registered");
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  TapeNode node;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("record: operand belongs to a different tape");
    values.push_back(v.value());
    node.parents.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(v.id())].requires_grad;
  }
  node.output = primitive->forward(values);
  node.primitive = primitive;
  node.id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.back().id);
}

std::size_t Tape::primitive_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TapeNode& n) { return n.primitive != nullptr; }));
}

// ---------------------------------------------------------------------------

void GradientStore::accumulate(ParamId id, const Tensor& g) {
  auto [it, inserted] = by_param_.try_emplace(id, g);
  if (!inserted) it->second.array() += g.array();
}

void GradientStore::accumulate_leaf(NodeId id, const Tensor& g) {
  auto [it, inserted] = by_leaf_.try_emplace(id, g);
  if (!inserted) it->second.array() += g.array();
}

const Tensor& GradientStore::operator[](const Parameter& p) const { return get(p.id()); }

const Tensor& GradientStore::get(ParamId id) const {
  auto it = by_param_.find(id);
  if (it == by_param_.end()) throw ContractError("no gradient recorded for parameter id " + std::to_string(id));
  return it->second;
}

Tensor GradientStore::wrt(const Var& v) const {
  if (auto it = by_leaf_.find(v.id()); it != by_leaf_.end()) return it->second;
  return Tensor::zeros(v.shape());
}

void GradientStore::merge(const GradientStore& other) {
  for (const auto& [id, g] : other.by_param_) accumulate(id, g);
  for (const auto& [id, g] : other.by_leaf_) accumulate_leaf(id, g);
}

void GradientStore::scale(double factor) {
  for (auto& [id, g] : by_param_) g.array() *= factor;
}

double GradientStore::global_norm() const {
  double total = 0.0;
  for (const auto& [id, g] : by_param_) total += g.array().square().sum();
  return std::sqrt(total);
}

GradientStore backward_from(const Tape& tape, const Var& output, const Tensor& seed) {
  if (&output.tape() != &tape) throw ContractError("backward: output belongs to a different tape");
  if (seed.shape() != output.shape())
    throw DimensionError("backward: seed shape " + to_string(seed.shape()) + " does not match output shape " +
                         to_string(output.shape()));
  const auto n = static_cast<std::size_t>(output.id()) + 1;
  std::vector<std::optional<Tensor>> adjoint(n);
  adjoint[n - 1] = seed;
  GradientStore store;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const TapeNode& node = tape.node(static_cast<NodeId>(i));
    if (node.param && node.requires_grad) store.accumulate(*node.param, Tensor::zeros(node.output.shape()));
  }
  for (std::size_t k = n; k-- > 0;) {
    if (!adjoint[k]) continue;
    const TapeNode& node = tape.node(static_cast<NodeId>(k));
    if (!node.primitive) {
      if (node.param) {
        if (node.requires_grad) store.accumulate(*node.param, *adjoint[k]);
      } else if (node.requires_grad) {
        store.accumulate_leaf(node.id, *adjoint[k]);
      }
      continue;
    }
    std::vector<Tensor> inputs;
    inputs.reserve(node.parents.size());
    for (NodeId p : node.parents) inputs.push_back(tape.node(p).output);
    for (std::size_t a = 0; a < node.parents.size(); ++a) {
      const TapeNode& parent = tape.node(node.parents[a]);
      if (!parent.requires_grad) continue;
      Tensor g = node.primitive->vjp(inputs, node.output, *adjoint[k], a);
      auto& slot = adjoint[static_cast<std::size_t>(parent.id)];
      if (slot)
        slot->array() += g.array();
      else
        slot = std::move(g);
    }
    adjoint[k].reset();
  }
  return store;
}

GradientStore backward(const Tape& tape, const Var& loss) {
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  return backward_from(tape, loss, Tensor::ones(loss.shape()));
}

Tensor forward_tangent(const Tape& tape, const Var& output, const std::map<NodeId, Tensor>& seeds) {
  const auto n = static_cast<std::size_t>(output.id()) + 1;
  std::vector<Tensor> tangent(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TapeNode& node = tape.node(static_cast<NodeId>(i));
    if (!node.primitive) {
      auto it = seeds.find(node.id);
      if (it != seeds.end()) {
        if (it->second.shape() != node.output.shape())
          throw DimensionError("jvp: tangent shape " + to_string(it->second.shape()) + " does not match " +
                               to_string(node.output.shape()));
        tangent[i] = it->second;
      } else {
        tangent[i] = Tensor::zeros(node.output.shape());
      }
      continue;
    }
    std::vector<Tensor> inputs, tangents;
    for (NodeId p : node.parents) {
      inputs.push_back(tape.node(p).output);
      tangents.push_back(tangent[static_cast<std::size_t>(p)]);
    }
    tangent[i] = node.primitive->jvp(inputs, node.output, tangents);
  }
  return tangent[n - 1];
}

Tensor vjp(const UnaryFn& f, const Tensor& x, const Tensor& v) {
  Tape tape;
  Var in = tape.input(x);
  Var out = f(in);
  if (v.shape() != out.shape())
    throw DimensionError("vjp: cotangent shape " + to_string(v.shape()) + " does not match output shape " +
                         to_string(out.shape()));
  return backward_from(tape, out, v).wrt(in);
}

Tensor jvp(const UnaryFn& f, const Tensor& x, const Tensor& u) {
  if (u.shape() != x.shape())
    throw DimensionError("jvp: tangent shape " + to_string(u.shape()) + " does not match input shape " +
                         to_string(x.shape()));
  Tape tape;
  Var in = tape.input(x);
  Var out = f(in);
  return forward_tangent(tape, out, {{in.id(), u}});
}

// ---------------------------------------------------------------------------

Registry& Registry::global() {
  static Registry* registry = [] {
    auto* r = new Registry();
    detail::register_builtin_primitives(*r);
    return r;
  }();
  return *registry;
}

void Registry::add(std::string name) {
  if (!contains(name)) names_.push_back(std::move(name));
}

bool Registry::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<std::string> Registry::names() const { return names_; }

}  // namespace difflab::ad
