#include "difflab/autodiff/ops.hpp"

#include <cmath>
#include <numbers>

namespace difflab::ad {

namespace {

Tape& tape_of(std::span<const Var> vars) { return vars.front().tape(); }

template <typename P, typename... Args>
Var apply(std::initializer_list<Var> inputs, Args&&... args) {
  static_assert(std::is_base_of_v<Primitive, P>);
  auto prim = std::make_shared<const P>(std::forward<Args>(args)...);
  return tape_of(std::span<const Var>(inputs.begin(), inputs.size())).record(prim, inputs);
}

// ---------------------------------------------------------------------------
// Broadcasting binary arithmetic

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

class Binary final : public Primitive {
 public:
  explicit Binary(BinaryKind kind) : kind_(kind) {}
  std::string_view name() const override {
    switch (kind_) {
      case BinaryKind::kAdd: return "add";
      case BinaryKind::kSub: return "sub";
      case BinaryKind::kMul: return "mul";
      case BinaryKind::kDiv: return "div";
    }
    return "";
  }
  Tensor forward(std::span<const Tensor> in) const override {
    switch (kind_) {
      case BinaryKind::kAdd: return difflab::add(in[0], in[1]);
      case BinaryKind::kSub: return difflab::sub(in[0], in[1]);
      case BinaryKind::kMul: return difflab::mul(in[0], in[1]);
      case BinaryKind::kDiv: return difflab::div(in[0], in[1]);
    }
    return {};
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t arg) const override {
    const Shape& target = in[arg].shape();
    switch (kind_) {
      case BinaryKind::kAdd: return sum_to_shape(adj, target);
      case BinaryKind::kSub: return arg == 0 ? sum_to_shape(adj, target) : sum_to_shape(-adj, target);
      case BinaryKind::kMul: return sum_to_shape(difflab::mul(adj, in[1 - arg]), target);
      case BinaryKind::kDiv:
        if (arg == 0) return sum_to_shape(difflab::div(adj, in[1]), target);
        return sum_to_shape(zip(difflab::mul(adj, in[0]), in[1], [](double g, double b) { return -g / (b * b); }),
                            target);
    }
    return {};
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    Tensor r;
    switch (kind_) {
      case BinaryKind::kAdd: r = difflab::add(t[0], t[1]); break;
      case BinaryKind::kSub: r = difflab::sub(t[0], t[1]); break;
      case BinaryKind::kMul: r = difflab::add(difflab::mul(t[0], in[1]), difflab::mul(in[0], t[1])); break;
      case BinaryKind::kDiv:
        r = difflab::sub(difflab::div(t[0], in[1]),
                         difflab::div(difflab::mul(in[0], t[1]), difflab::mul(in[1], in[1])));
        break;
    }
    return r.shape() == out.shape() ? r : broadcast_to(r, out.shape());
  }

 private:
  BinaryKind kind_;
};

// x (op) C for a constant tensor C that broadcasts into x's shape.
class ConstBinary final : public Primitive {
 public:
  ConstBinary(bool multiply, Tensor c) : multiply_(multiply), c_(std::move(c)) {}
  std::string_view name() const override { return multiply_ ? "mul_const" : "add_const"; }
  Tensor forward(std::span<const Tensor> in) const override {
    Tensor r = multiply_ ? difflab::mul(in[0], c_) : difflab::add(in[0], c_);
    if (r.shape() != in[0].shape())
      throw DimensionError("constant operand " + to_string(c_.shape()) + " must broadcast into " +
                           to_string(in[0].shape()));
    return r;
  }
  Tensor vjp(std::span<const Tensor>, const Tensor&, const Tensor& adj, std::size_t) const override {
    return multiply_ ? difflab::mul(adj, c_) : adj;
  }
  Tensor jvp(std::span<const Tensor>, const Tensor&, std::span<const Tensor> t) const override {
    return multiply_ ? difflab::mul(t[0], c_) : t[0];
  }

 private:
  bool multiply_;
  Tensor c_;
};

// ---------------------------------------------------------------------------
// Elementwise unary maps with closed-form derivatives.

struct UnaryRule {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double x, double y)> df;  // derivative given input and output
};

class Unary final : public Primitive {
 public:
  explicit Unary(UnaryRule rule) : rule_(std::move(rule)) {}
  std::string_view name() const override { return rule_.name; }
  Tensor forward(std::span<const Tensor> in) const override { return map(in[0], rule_.f); }
  Tensor vjp(std::span<const Tensor> in, const Tensor& out, const Tensor& adj, std::size_t) const override {
    Tensor g(adj.shape());
    for (Index i = 0; i < g.size(); ++i) g[i] = adj[i] * rule_.df(in[0][i], out[i]);
    return g;
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    Tensor g(out.shape());
    for (Index i = 0; i < g.size(); ++i) g[i] = t[0][i] * rule_.df(in[0][i], out[i]);
    return g;
  }

 private:
  UnaryRule rule_;
};

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

Var unary(Var x, UnaryRule rule) { return apply<Unary>({x}, std::move(rule)); }

// ---------------------------------------------------------------------------

class PRelu final : public Primitive {
 public:
  std::string_view name() const override { return "prelu"; }
  Tensor forward(std::span<const Tensor> in) const override {
    return zip(in[0], in[1], [](double x, double s) { return x > 0 ? x : s * x; });
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor& out, const Tensor& adj, std::size_t arg) const override {
    if (arg == 0) {
      Tensor d = zip(in[0], in[1], [](double x, double s) { return x > 0 ? 1.0 : s; });
      return sum_to_shape(difflab::mul(adj, d), in[0].shape());
    }
    Tensor d = map(broadcast_to(in[0], out.shape()), [](double x) { return x > 0 ? 0.0 : x; });
    return sum_to_shape(difflab::mul(adj, d), in[1].shape());
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    Tensor dx = zip(in[0], in[1], [](double x, double s) { return x > 0 ? 1.0 : s; });
    Tensor ds = map(broadcast_to(in[0], out.shape()), [](double x) { return x > 0 ? 0.0 : x; });
    return broadcast_to(difflab::add(difflab::mul(dx, t[0]), difflab::mul(ds, t[1])), out.shape());
  }
};

class MatMul final : public Primitive {
 public:
  std::string_view name() const override { return "matmul"; }
  Tensor forward(std::span<const Tensor> in) const override { return difflab::matmul(in[0], in[1]); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t arg) const override {
    if (arg == 0) return difflab::matmul(adj, difflab::transpose(in[1]));
    return difflab::matmul(difflab::transpose(in[0]), adj);
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> t) const override {
    return difflab::add(difflab::matmul(t[0], in[1]), difflab::matmul(in[0], t[1]));
  }
};

class BatchedMatMul final : public Primitive {
 public:
  std::string_view name() const override { return "batched_matmul"; }
  Tensor forward(std::span<const Tensor> in) const override { return difflab::batched_matmul(in[0], in[1]); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t arg) const override {
    if (arg == 0) return difflab::batched_matmul(adj, difflab::transpose(in[1], {0, 2, 1}));
    return difflab::batched_matmul(difflab::transpose(in[0], {0, 2, 1}), adj);
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> t) const override {
    return difflab::add(difflab::batched_matmul(t[0], in[1]), difflab::batched_matmul(in[0], t[1]));
  }
};

// ---------------------------------------------------------------------------
// Reductions

Shape kept_shape(const Shape& in, const std::vector<Index>& axes) {
  Shape kept = in;
  const auto mask = detail::axis_mask(static_cast<Index>(in.size()), axes);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) kept[i] = 1;
  return kept;
}

class Reduce final : public Primitive {
 public:
  Reduce(Reduction kind, std::vector<Index> axes, bool keep) : kind_(kind), axes_(std::move(axes)), keep_(keep) {}
  std::string_view name() const override {
    return kind_ == Reduction::kSum ? "sum" : kind_ == Reduction::kMean ? "mean" : "max";
  }
  Tensor forward(std::span<const Tensor> in) const override { return reduce(kind_, in[0], axes_, keep_); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    const Shape kept = kept_shape(in[0].shape(), axes_);
    Tensor a = adj.reshaped(kept);
    if (kind_ == Reduction::kMax) return route_to_argmax(in[0], a, kept);
    Tensor g = broadcast_to(a, in[0].shape());
    if (kind_ == Reduction::kMean) g.array() /= static_cast<double>(count(in[0].shape(), kept));
    return g;
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> t) const override {
    if (kind_ != Reduction::kMax) return reduce(kind_, t[0], axes_, keep_);
    const Shape kept = kept_shape(in[0].shape(), axes_);
    Tensor out(kept);
    const auto chosen = argmax_flags(in[0], kept);
    detail::for_each_broadcast(in[0].shape(), kept, in[0].shape(), [&](Index o, Index g, Index) {
      if (chosen[static_cast<std::size_t>(o)]) out[g] = t[0][o];
    });
    return keep_ ? out : out.reshaped(reduce(kind_, in[0], axes_, false).shape());
  }

 private:
  static Index count(const Shape& in, const Shape& kept) { return shape_size(in) / std::max<Index>(1, shape_size(kept)); }

  // First occurrence of the maximum in each reduced group.
  std::vector<bool> argmax_flags(const Tensor& x, const Shape& kept) const {
    const Tensor m = reduce(Reduction::kMax, x, axes_, true);
    std::vector<bool> taken(static_cast<std::size_t>(m.size()), false);
    std::vector<bool> chosen(static_cast<std::size_t>(x.size()), false);
    detail::for_each_broadcast(x.shape(), kept, x.shape(), [&](Index o, Index g, Index) {
      if (!taken[static_cast<std::size_t>(g)] && x[o] == m[g]) {
        taken[static_cast<std::size_t>(g)] = true;
        chosen[static_cast<std::size_t>(o)] = true;
      }
    });
    return chosen;
  }
  Tensor route_to_argmax(const Tensor& x, const Tensor& adj, const Shape& kept) const {
    Tensor g(x.shape());
    const auto chosen = argmax_flags(x, kept);
    detail::for_each_broadcast(x.shape(), kept, x.shape(), [&](Index o, Index k, Index) {
      if (chosen[static_cast<std::size_t>(o)]) g[o] = adj[k];
    });
    return g;
  }

  Reduction kind_;
  std::vector<Index> axes_;
  bool keep_;
};

// ---------------------------------------------------------------------------
// Softmax family

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  Tensor out(Shape(a.shape().begin(), a.shape().end() - 1));
  auto av = a.rows_view();
  auto bv = b.rows_view();
  for (Index r = 0; r < av.rows(); ++r) out[r] = av.row(r).dot(bv.row(r));
  return out;
}

Tensor softmax_jacobian_apply(const Tensor& y, const Tensor& v, double temperature) {
  const Tensor dots = rowwise_dot(v, y);
  Tensor g(y.shape());
  auto gv = g.rows_view();
  auto yv = y.rows_view();
  auto vv = v.rows_view();
  for (Index r = 0; r < yv.rows(); ++r)
    gv.row(r) = yv.row(r).cwiseProduct((vv.row(r).array() - dots[r]).matrix()) / temperature;
  return g;
}

class Softmax final : public Primitive {
 public:
  explicit Softmax(double temperature) : temperature_(temperature) {}
  std::string_view name() const override { return "softmax"; }
  Tensor forward(std::span<const Tensor> in) const override { return difflab::softmax(in[0], temperature_); }
  Tensor vjp(std::span<const Tensor>, const Tensor& out, const Tensor& adj, std::size_t) const override {
    return softmax_jacobian_apply(out, adj, temperature_);
  }
  Tensor jvp(std::span<const Tensor>, const Tensor& out, std::span<const Tensor> t) const override {
    return softmax_jacobian_apply(out, t[0], temperature_);
  }

 private:
  double temperature_;
};

class LogSumExp final : public Primitive {
 public:
  std::string_view name() const override { return "logsumexp"; }
  Tensor forward(std::span<const Tensor> in) const override {
    if (in[0].rank() == 0) throw DimensionError("logsumexp: rank >= 1 required");
    return difflab::logsumexp(in[0]);
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    Tensor p = difflab::softmax(in[0]);
    auto pv = p.rows_view();
    for (Index r = 0; r < pv.rows(); ++r) pv.row(r) *= adj[r];
    return p;
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> t) const override {
    return rowwise_dot(difflab::softmax(in[0]), t[0]);
  }
};

// ---------------------------------------------------------------------------
// Layout

class Reshape final : public Primitive {
 public:
  explicit Reshape(Shape shape) : shape_(std::move(shape)) {}
  std::string_view name() const override { return "reshape"; }
  Tensor forward(std::span<const Tensor> in) const override { return in[0].reshaped(shape_); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    return adj.reshaped(in[0].shape());
  }
  Tensor jvp(std::span<const Tensor>, const Tensor& out, std::span<const Tensor> t) const override {
    return t[0].reshaped(out.shape());
  }

 private:
  Shape shape_;
};

class Transpose final : public Primitive {
 public:
  explicit Transpose(std::vector<Index> perm) : perm_(std::move(perm)), inverse_(perm_.size()) {
    for (std::size_t i = 0; i < perm_.size(); ++i)
      if (perm_[i] >= 0 && static_cast<std::size_t>(perm_[i]) < perm_.size())
        inverse_[static_cast<std::size_t>(perm_[i])] = static_cast<Index>(i);
  }
  std::string_view name() const override { return "transpose"; }
  Tensor forward(std::span<const Tensor> in) const override { return difflab::transpose(in[0], perm_); }
  Tensor vjp(std::span<const Tensor>, const Tensor&, const Tensor& adj, std::size_t) const override {
    return difflab::transpose(adj, inverse_);
  }
  Tensor jvp(std::span<const Tensor>, const Tensor&, std::span<const Tensor> t) const override {
    return difflab::transpose(t[0], perm_);
  }

 private:
  std::vector<Index> perm_;
  std::vector<Index> inverse_;
};

class Concat final : public Primitive {
 public:
  explicit Concat(Index axis) : axis_(axis) {}
  std::string_view name() const override { return "concat"; }
  Tensor forward(std::span<const Tensor> in) const override {
    return difflab::concat(std::vector<Tensor>(in.begin(), in.end()), axis_);
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t arg) const override {
    const Index ax = in[0].normalize_axis(axis_);
    Index start = 0;
    for (std::size_t i = 0; i < arg; ++i) start += in[i].shape()[static_cast<std::size_t>(ax)];
    return difflab::slice(adj, ax, start, start + in[arg].shape()[static_cast<std::size_t>(ax)]);
  }
  Tensor jvp(std::span<const Tensor>, const Tensor&, std::span<const Tensor> t) const override {
    return difflab::concat(std::vector<Tensor>(t.begin(), t.end()), axis_);
  }

 private:
  Index axis_;
};

class Slice final : public Primitive {
 public:
  Slice(Index axis, Index start, Index stop) : axis_(axis), start_(start), stop_(stop) {}
  std::string_view name() const override { return "slice"; }
  Tensor forward(std::span<const Tensor> in) const override {
    return difflab::slice(in[0], axis_, start_, stop_);
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    const Index ax = in[0].normalize_axis(axis_);
    Shape before = in[0].shape(), after = in[0].shape();
    before[static_cast<std::size_t>(ax)] = start_;
    after[static_cast<std::size_t>(ax)] = in[0].shape()[static_cast<std::size_t>(ax)] - stop_;
    return difflab::concat(std::vector<Tensor>{Tensor(before), adj, Tensor(after)}, ax);
  }
  Tensor jvp(std::span<const Tensor>, const Tensor&, std::span<const Tensor> t) const override {
    return difflab::slice(t[0], axis_, start_, stop_);
  }

 private:
  Index axis_, start_, stop_;
};

// ---------------------------------------------------------------------------
// Indexed row operations

Index row_width(const Tensor& x) { return x.rank() == 0 || x.dim(0) == 0 ? 0 : x.size() / x.dim(0); }

Shape with_rows(const Shape& s, Index rows) {
  Shape out = s;
  out[0] = rows;
  return out;
}

class GatherRows final : public Primitive {
 public:
  explicit GatherRows(std::vector<Index> index) : index_(std::move(index)) {}
  std::string_view name() const override { return "gather_rows"; }
  Tensor forward(std::span<const Tensor> in) const override { return gather(in[0]); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    Tensor g(in[0].shape());
    const Index w = row_width(in[0]);
    for (std::size_t r = 0; r < index_.size(); ++r)
      for (Index c = 0; c < w; ++c) g[index_[r] * w + c] += adj[static_cast<Index>(r) * w + c];
    return g;
  }
  Tensor jvp(std::span<const Tensor>, const Tensor&, std::span<const Tensor> t) const override { return gather(t[0]); }

 private:
  Tensor gather(const Tensor& x) const {
    if (x.rank() < 1) throw DimensionError("gather_rows: rank >= 1 required");
    const Index n = x.dim(0);
    const Index w = row_width(x);
    Tensor out(with_rows(x.shape(), static_cast<Index>(index_.size())));
    for (std::size_t r = 0; r < index_.size(); ++r) {
      const Index src = index_[r];
      if (src < 0 || src >= n)
        throw DimensionError("gather_rows: index " + std::to_string(src) + " out of range [0," + std::to_string(n) + ")");
      std::copy_n(x.data() + src * w, w, out.data() + static_cast<Index>(r) * w);
    }
    return out;
  }

  std::vector<Index> index_;
};

class ScatterRows final : public Primitive {
 public:
  ScatterRows(std::vector<Index> index, Index groups, Scatter kind)
      : index_(std::move(index)), groups_(groups), kind_(kind), counts_(static_cast<std::size_t>(groups), 0) {
    for (Index g : index_) {
      if (g < 0 || g >= groups_)
        throw DimensionError("scatter_rows: group id " + std::to_string(g) + " out of range [0," +
                             std::to_string(groups_) + ")");
      ++counts_[static_cast<std::size_t>(g)];
    }
    if (kind_ != Scatter::kSum)
      for (Index g = 0; g < groups_; ++g)
        if (counts_[static_cast<std::size_t>(g)] == 0)
          throw DimensionError(std::string("scatter_rows: ") + (kind_ == Scatter::kMax ? "max" : "mean") +
                               " over empty group " + std::to_string(g));
  }
  std::string_view name() const override { return "scatter_rows"; }
  Tensor forward(std::span<const Tensor> in) const override {
    const Tensor& x = in[0];
    if (x.rank() < 1 || x.dim(0) != static_cast<Index>(index_.size()))
      throw DimensionError("scatter_rows: " + std::to_string(index_.size()) + " group ids for input " +
                           to_string(x.shape()));
    const Index w = row_width(x);
    Tensor out(with_rows(x.shape(), groups_));
    if (kind_ == Scatter::kMax) out.array().setConstant(-std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < index_.size(); ++r)
      for (Index c = 0; c < w; ++c) {
        double& slot = out[index_[r] * w + c];
        const double v = x[static_cast<Index>(r) * w + c];
        slot = kind_ == Scatter::kMax ? std::max(slot, v) : slot + v;
      }
    if (kind_ == Scatter::kMean)
      for (Index g = 0; g < groups_; ++g)
        for (Index c = 0; c < w; ++c) out[g * w + c] /= static_cast<double>(counts_[static_cast<std::size_t>(g)]);
    return out;
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor& out, const Tensor& adj, std::size_t) const override {
    return transfer(in[0], out, adj, /*to_input=*/true);
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    return transfer(in[0], out, t[0], /*to_input=*/false);
  }

 private:
  // Shared routing for both directions: sum/mean are linear; max follows the
  // first row achieving the group maximum in each column.
  Tensor transfer(const Tensor& x, const Tensor& out, const Tensor& v, bool to_input) const {
    const Index w = row_width(x);
    Tensor r(to_input ? x.shape() : out.shape());
    std::vector<bool> taken(kind_ == Scatter::kMax ? static_cast<std::size_t>(groups_ * w) : 0, false);
    for (std::size_t row = 0; row < index_.size(); ++row) {
      const Index g = index_[row];
      for (Index c = 0; c < w; ++c) {
        const Index xi = static_cast<Index>(row) * w + c;
        const Index oi = g * w + c;
        double factor = 1.0;
        if (kind_ == Scatter::kMean) factor = 1.0 / static_cast<double>(counts_[static_cast<std::size_t>(g)]);
        if (kind_ == Scatter::kMax) {
          if (taken[static_cast<std::size_t>(oi)] || x[xi] != out[oi]) continue;
          taken[static_cast<std::size_t>(oi)] = true;
        }
        if (to_input)
          r[xi] += factor * v[oi];
        else
          r[oi] += factor * v[xi];
      }
    }
    return r;
  }

  std::vector<Index> index_;
  Index groups_;
  Scatter kind_;
  std::vector<Index> counts_;
};

class SegmentSoftmax final : public Primitive {
 public:
  SegmentSoftmax(std::vector<Index> segment, Index segments) : segment_(std::move(segment)), segments_(segments) {
    for (Index s : segment_)
      if (s < 0 || s >= segments_) throw DimensionError("segment_softmax: segment id out of range");
  }
  std::string_view name() const override { return "segment_softmax"; }
  Tensor forward(std::span<const Tensor> in) const override {
    const Tensor& x = in[0];
    if (x.rank() != 1 || x.size() != static_cast<Index>(segment_.size()))
      throw DimensionError("segment_softmax: expected a score vector of length " + std::to_string(segment_.size()));
    std::vector<double> shift(static_cast<std::size_t>(segments_), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < segment_.size(); ++i) {
      auto& s = shift[static_cast<std::size_t>(segment_[i])];
      s = std::max(s, x[static_cast<Index>(i)]);
    }
    std::vector<double> total(static_cast<std::size_t>(segments_), 0.0);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < segment_.size(); ++i) {
      const auto s = static_cast<std::size_t>(segment_[i]);
      y[static_cast<Index>(i)] = std::exp(x[static_cast<Index>(i)] - shift[s]);
      total[s] += y[static_cast<Index>(i)];
    }
    for (std::size_t i = 0; i < segment_.size(); ++i) y[static_cast<Index>(i)] /= total[static_cast<std::size_t>(segment_[i])];
    return y;
  }
  Tensor vjp(std::span<const Tensor>, const Tensor& out, const Tensor& adj, std::size_t) const override {
    return apply_jacobian(out, adj);
  }
  Tensor jvp(std::span<const Tensor>, const Tensor& out, std::span<const Tensor> t) const override {
    return apply_jacobian(out, t[0]);
  }

 private:
  Tensor apply_jacobian(const Tensor& y, const Tensor& v) const {
    std::vector<double> dots(static_cast<std::size_t>(segments_), 0.0);
    for (std::size_t i = 0; i < segment_.size(); ++i)
      dots[static_cast<std::size_t>(segment_[i])] += y[static_cast<Index>(i)] * v[static_cast<Index>(i)];
    Tensor g(y.shape());
    for (std::size_t i = 0; i < segment_.size(); ++i) {
      const auto k = static_cast<Index>(i);
      g[k] = y[k] * (v[k] - dots[static_cast<std::size_t>(segment_[i])]);
    }
    return g;
  }

  std::vector<Index> segment_;
  Index segments_;
};

}  // namespace

// ---------------------------------------------------------------------------

Var add(Var a, Var b) { return apply<Binary>({a, b}, BinaryKind::kAdd); }
Var sub(Var a, Var b) { return apply<Binary>({a, b}, BinaryKind::kSub); }
Var mul(Var a, Var b) { return apply<Binary>({a, b}, BinaryKind::kMul); }
Var div(Var a, Var b) { return apply<Binary>({a, b}, BinaryKind::kDiv); }
Var add(Var a, const Tensor& c) { return apply<ConstBinary>({a}, false, c); }
Var mul(Var a, const Tensor& c) { return apply<ConstBinary>({a}, true, c); }

Var scale(Var a, double factor) {
  return unary(a, {"scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; }});
}
Var shift(Var a, double offset) {
  return unary(a, {"shift", [offset](double x) { return x + offset; }, [](double, double) { return 1.0; }});
}

Var neg(Var x) { return unary(x, {"neg", [](double v) { return -v; }, [](double, double) { return -1.0; }}); }
Var exp(Var x) {
  return unary(x, {"exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; }});
}
Var log(Var x) {
  return unary(x, {"log",
                   [](double v) {
                     if (!(v > 0)) throw DomainError("log: non-positive input " + std::to_string(v));
                     return std::log(v);
                   },
                   [](double v, double) { return 1.0 / v; }});
}
Var abs(Var x) {
  return unary(x, {"abs", [](double v) { return std::abs(v); },
                   [](double v, double) { return v > 0 ? 1.0 : v < 0 ? -1.0 : 0.0; }});
}
Var sqrt(Var x) {
  return unary(x, {"sqrt",
                   [](double v) {
                     if (v < 0) throw DomainError("sqrt: negative input");
                     return std::sqrt(v);
                   },
                   [](double, double y) { return 0.5 / y; }});
}
Var square(Var x) {
  return unary(x, {"square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }});
}
Var pow(Var x, double p) {
  return unary(x, {"pow", [p](double v) { return std::pow(v, p); },
                   [p](double v, double) { return p * std::pow(v, p - 1.0); }});
}

Var relu(Var x) {
  return unary(x, {"relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; }});
}
Var leaky_relu(Var x, double slope) {
  return unary(x, {"leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
                   [slope](double v, double) { return v > 0 ? 1.0 : slope; }});
}
Var prelu(Var x, Var slope) { return apply<PRelu>({x, slope}); }
Var sigmoid(Var x) {
  return unary(x, {"sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); }});
}
Var tanh(Var x) {
  return unary(x, {"tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; }});
}
Var softplus(Var x) {
  return unary(x, {"softplus", [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
                   [](double v, double) { return stable_sigmoid(v); }});
}
Var elu(Var x, double alpha) {
  return unary(x, {"elu", [alpha](double v) { return v > 0 ? v : alpha * std::expm1(v); },
                   [alpha](double v, double) { return v > 0 ? 1.0 : alpha * std::exp(v); }});
}
Var gelu(Var x) {
  return unary(x, {"gelu",
                   [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
                   [](double v, double) {
                     const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                     return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                   }});
}
Var silu(Var x) {
  return unary(x, {"silu", [](double v) { return v * stable_sigmoid(v); },
                   [](double v, double) {
                     const double s = stable_sigmoid(v);
                     return s + v * s * (1.0 - s);
                   }});
}

Var matmul(Var a, Var b) { return apply<MatMul>({a, b}); }
Var batched_matmul(Var a, Var b) { return apply<BatchedMatMul>({a, b}); }

Var sum(Var x, std::vector<Index> axes, bool keep) { return apply<Reduce>({x}, Reduction::kSum, std::move(axes), keep); }
Var sum(Var x) { return sum(x, all_axes(x.value().rank())); }
Var mean(Var x, std::vector<Index> axes, bool keep) {
  return apply<Reduce>({x}, Reduction::kMean, std::move(axes), keep);
}
Var mean(Var x) { return mean(x, all_axes(x.value().rank())); }
Var max(Var x, std::vector<Index> axes, bool keep) { return apply<Reduce>({x}, Reduction::kMax, std::move(axes), keep); }

Var softmax(Var x, double temperature) {
  if (!(temperature > 0)) throw ContractError("softmax: temperature must be positive");
  return apply<Softmax>({x}, temperature);
}
Var logsumexp(Var x) { return apply<LogSumExp>({x}); }

Var reshape(Var x, Shape shape) { return apply<Reshape>({x}, std::move(shape)); }
Var transpose(Var x, std::vector<Index> perm) { return apply<Transpose>({x}, std::move(perm)); }
Var transpose(Var x) {
  if (x.value().rank() != 2) throw DimensionError("transpose(): rank-2 input required, got " + to_string(x.shape()));
  return transpose(x, {1, 0});
}
Var concat(const std::vector<Var>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  return parts.front().tape().record(std::make_shared<const Concat>(axis), std::span<const Var>(parts));
}
Var slice(Var x, Index axis, Index start, Index stop) { return apply<Slice>({x}, axis, start, stop); }

Var gather_rows(Var x, std::vector<Index> index) { return apply<GatherRows>({x}, std::move(index)); }
Var scatter_rows(Var x, std::vector<Index> index, Index groups, Scatter kind) {
  return apply<ScatterRows>({x}, std::move(index), groups, kind);
}
Var segment_softmax(Var scores, std::vector<Index> segment, Index segments) {
  return apply<SegmentSoftmax>({scores}, std::move(segment), segments);
}

std::vector<std::string> core_primitive_names() {
  return {"add",      "sub",        "mul",       "div",     "add_const",  "mul_const",   "scale",
          "shift",    "neg",        "exp",       "log",     "abs",        "sqrt",        "square",
          "pow",      "relu",       "leaky_relu", "prelu",  "sigmoid",    "tanh",        "softplus",
          "elu",      "gelu",       "silu",      "matmul",  "batched_matmul", "sum",     "mean",
          "max",      "softmax",    "logsumexp", "reshape", "transpose",  "concat",      "slice",
          "gather_rows", "scatter_rows", "segment_softmax"};
}

}  // namespace difflab::ad
