#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "difflab/tensor.hpp"

// Deterministic numerical kernels over BasicTensor. All functions are pure:
// they never modify their arguments and always return freshly owned results.
namespace difflab {

// ---------------------------------------------------------------------------
// Shape helpers

/// Right-aligned broadcast of two shapes; extent-1 axes are repeated.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const Index ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const Index eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

namespace detail {

// Strides of `shape` when read as if broadcast to `target` (0 on repeated axes).
inline Shape broadcast_strides(const Shape& shape, const Shape& target) {
  Shape strides(target.size(), 0);
  const Shape own = row_major_strides(shape);
  const std::size_t lead = target.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i)
    strides[lead + i] = shape[i] == 1 ? 0 : own[i];
  return strides;
}

// Calls fn(out_flat, a_flat, b_flat) over the broadcast index space.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
  const Index total = shape_size(out);
  if (total == 0) return;
  const Shape stride_a = broadcast_strides(sa, out);
  const Shape stride_b = broadcast_strides(sb, out);
  const std::size_t r = out.size();
  std::vector<Index> idx(r, 0);
  Index oa = 0, ob = 0;
  for (Index flat = 0; flat < total; ++flat) {
    fn(flat, oa, ob);
    for (std::ptrdiff_t ax = static_cast<std::ptrdiff_t>(r) - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < out[a]) {
        oa += stride_a[a];
        ob += stride_b[a];
        break;
      }
      oa -= stride_a[a] * (out[a] - 1);
      ob -= stride_b[a] * (out[a] - 1);
      idx[a] = 0;
    }
  }
}

inline std::vector<bool> axis_mask(Index rank, const std::vector<Index>& axes) {
  std::vector<bool> mask(static_cast<std::size_t>(rank), false);
  for (Index ax : axes) {
    const Index a = ax < 0 ? ax + rank : ax;
    if (a < 0 || a >= rank)
      throw DimensionError("reduction axis " + std::to_string(ax) + " invalid for rank " + std::to_string(rank));
    if (mask[static_cast<std::size_t>(a)])
      throw DimensionError("reduction axis " + std::to_string(ax) + " listed twice");
    mask[static_cast<std::size_t>(a)] = true;
  }
  return mask;
}

}  // namespace detail

inline std::vector<Index> all_axes(Index rank) {
  std::vector<Index> axes(static_cast<std::size_t>(rank));
  std::iota(axes.begin(), axes.end(), Index{0});
  return axes;
}

// ---------------------------------------------------------------------------
// Products

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  BasicTensor<S> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

/// out[i] = a[i] @ b[i] for every leading index i.
template <typename S>
BasicTensor<S> batched_matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw DimensionError("batched_matmul: expected rank-3 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  if (a.dim(0) != b.dim(0))
    throw DimensionError("batched_matmul: batch extents differ in " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  if (a.dim(2) != b.dim(1))
    throw DimensionError("batched_matmul: inner extents differ in " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const Index n = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
  using Map = Eigen::Map<const typename BasicTensor<S>::RowMatrix>;
  using OutMap = Eigen::Map<typename BasicTensor<S>::RowMatrix>;
  BasicTensor<S> out({n, p, r});
  for (Index i = 0; i < n; ++i) {
    OutMap(out.data() + i * p * r, p, r).noalias() = Map(a.data() + i * p * q, p, q) * Map(b.data() + i * q * r, q, r);
  }
  return out;
}

/// Sum of the elementwise product over every axis.
template <typename S>
S generalized_dot(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("generalized_dot: shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return (a.array() * b.array()).sum();
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename S, typename Fn>
BasicTensor<S> map(const BasicTensor<S>& x, Fn&& fn) {
  BasicTensor<S> out(x.shape());
  const Index n = x.size();
  for (Index i = 0; i < n; ++i) out[i] = fn(x[i]);
  return out;
}

template <typename S, typename Fn>
BasicTensor<S> zip(const BasicTensor<S>& a, const BasicTensor<S>& b, Fn&& fn) {
  if (a.shape() == b.shape()) {
    BasicTensor<S> out(a.shape());
    for (Index i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  BasicTensor<S> out(broadcast_shapes(a.shape(), b.shape()));
  detail::for_each_broadcast(out.shape(), a.shape(), b.shape(),
                             [&](Index o, Index ia, Index ib) { out[o] = fn(a[ia], b[ib]); });
  return out;
}

template <typename S>
BasicTensor<S> add(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return zip(a, b, [](S x, S y) { return x + y; });
}
template <typename S>
BasicTensor<S> sub(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return zip(a, b, [](S x, S y) { return x - y; });
}
template <typename S>
BasicTensor<S> mul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return zip(a, b, [](S x, S y) { return x * y; });
}
template <typename S>
BasicTensor<S> div(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  return zip(a, b, [](S x, S y) { return x / y; });
}

template <typename S>
BasicTensor<S> operator+(const BasicTensor<S>& a, const BasicTensor<S>& b) { return add(a, b); }
template <typename S>
BasicTensor<S> operator-(const BasicTensor<S>& a, const BasicTensor<S>& b) { return sub(a, b); }
template <typename S>
BasicTensor<S> operator*(const BasicTensor<S>& a, const BasicTensor<S>& b) { return mul(a, b); }
template <typename S>
BasicTensor<S> operator/(const BasicTensor<S>& a, const BasicTensor<S>& b) { return div(a, b); }
template <typename S>
BasicTensor<S> operator*(const BasicTensor<S>& a, S s) {
  return BasicTensor<S>(a.shape(), a.array() * s);
}
template <typename S>
BasicTensor<S> operator*(S s, const BasicTensor<S>& a) { return a * s; }
template <typename S>
BasicTensor<S> operator+(const BasicTensor<S>& a, S s) {
  return BasicTensor<S>(a.shape(), a.array() + s);
}
template <typename S>
BasicTensor<S> operator-(const BasicTensor<S>& a) {
  return BasicTensor<S>(a.shape(), -a.array());
}

template <typename S>
BasicTensor<S> exp(const BasicTensor<S>& x) {
  return BasicTensor<S>(x.shape(), x.array().exp());
}
template <typename S>
BasicTensor<S> log(const BasicTensor<S>& x) {
  if (x.size() > 0 && !(x.array() > S(0)).all()) throw DomainError("log: input contains non-positive entries");
  return BasicTensor<S>(x.shape(), x.array().log());
}
template <typename S>
BasicTensor<S> neg(const BasicTensor<S>& x) { return -x; }
template <typename S>
BasicTensor<S> abs(const BasicTensor<S>& x) {
  return BasicTensor<S>(x.shape(), x.array().abs());
}
template <typename S>
BasicTensor<S> pow(const BasicTensor<S>& x, S p) {
  return map(x, [p](S v) { using std::pow; return pow(v, p); });
}

/// Sums `x` down to `target` by reducing the axes that broadcasting expanded.
template <typename S>
BasicTensor<S> sum_to_shape(const BasicTensor<S>& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shapes(target, x.shape()) != x.shape())
    throw DimensionError("sum_to_shape: " + to_string(x.shape()) + " is not a broadcast of " + to_string(target));
  BasicTensor<S> out(target);
  detail::for_each_broadcast(x.shape(), target, x.shape(), [&](Index o, Index it, Index) { out[it] += x[o]; });
  return out;
}

template <typename S>
BasicTensor<S> broadcast_to(const BasicTensor<S>& x, const Shape& target) {
  if (broadcast_shapes(x.shape(), target) != target)
    throw DimensionError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(target));
  BasicTensor<S> out(target);
  detail::for_each_broadcast(target, x.shape(), target, [&](Index o, Index ix, Index) { out[o] = x[ix]; });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduction { kSum, kMean, kMax };

/// Reduces `axes` of `x`; removed axes are dropped unless `keep_dims`.
/// Max reductions over an empty extent are rejected.
template <typename S>
BasicTensor<S> reduce(Reduction kind, const BasicTensor<S>& x, const std::vector<Index>& axes, bool keep_dims = false) {
  const std::vector<bool> mask = detail::axis_mask(x.rank(), axes);
  Shape kept_shape(x.shape());
  Shape out_shape;
  Index count = 1;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      count *= x.shape()[i];
      kept_shape[i] = 1;
      if (keep_dims) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape()[i]);
    }
  }
  if (kind == Reduction::kMax && count == 0) throw DimensionError("max reduction over an empty extent");
  BasicTensor<S> out(kept_shape);
  if (kind == Reduction::kMax) out.array().setConstant(-std::numeric_limits<S>::infinity());
  detail::for_each_broadcast(x.shape(), kept_shape, x.shape(), [&](Index o, Index io, Index) {
    if (kind == Reduction::kMax)
      out[io] = std::max(out[io], x[o]);
    else
      out[io] += x[o];
  });
  if (kind == Reduction::kMean) out.array() /= static_cast<S>(count);
  return out.reshaped(out_shape);
}

template <typename S>
BasicTensor<S> sum(const BasicTensor<S>& x, const std::vector<Index>& axes, bool keep_dims = false) {
  return reduce(Reduction::kSum, x, axes, keep_dims);
}
template <typename S>
BasicTensor<S> mean(const BasicTensor<S>& x, const std::vector<Index>& axes, bool keep_dims = false) {
  return reduce(Reduction::kMean, x, axes, keep_dims);
}
template <typename S>
BasicTensor<S> max(const BasicTensor<S>& x, const std::vector<Index>& axes, bool keep_dims = false) {
  return reduce(Reduction::kMax, x, axes, keep_dims);
}
template <typename S>
S sum_all(const BasicTensor<S>& x) { return x.array().sum(); }

// ---------------------------------------------------------------------------
// Softmax family (last axis)

/// Row-wise softmax(x / temperature), shifted by the row max for stability.
template <typename S>
BasicTensor<S> softmax(const BasicTensor<S>& x, S temperature = S(1)) {
  if (!(temperature > S(0))) throw ContractError("softmax: temperature must be positive");
  if (x.rank() == 0) return BasicTensor<S>::scalar(S(1));
  if (x.size() > 0 && x.array().isNaN().any()) throw NumericError("softmax: NaN input");
  BasicTensor<S> out(x.shape());
  auto in = x.rows_view();
  auto res = out.rows_view();
  for (Index r = 0; r < in.rows(); ++r) {
    const S shift = in.row(r).maxCoeff();
    S total = 0;
    for (Index c = 0; c < in.cols(); ++c) {
      using std::exp;
      res(r, c) = exp((in(r, c) - shift) / temperature);
      total += res(r, c);
    }
    res.row(r) /= total;
  }
  return out;
}

/// log(sum(exp(x))) over the last axis, with the row max factored out.
template <typename S>
BasicTensor<S> logsumexp(const BasicTensor<S>& x) {
  if (x.rank() == 0) return x;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  BasicTensor<S> out(out_shape);
  auto in = x.rows_view();
  for (Index r = 0; r < in.rows(); ++r) {
    const S shift = in.row(r).maxCoeff();
    if (!std::isfinite(static_cast<double>(shift))) {
      out[r] = shift;
      continue;
    }
    S total = 0;
    for (Index c = 0; c < in.cols(); ++c) {
      using std::exp;
      total += exp(in(r, c) - shift);
    }
    using std::log;
    out[r] = shift + log(total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

template <typename S>
BasicTensor<S> reshape(const BasicTensor<S>& x, Shape shape) { return x.reshaped(std::move(shape)); }

/// Permutes axes; `perm[i]` names the input axis that becomes output axis i.
template <typename S>
BasicTensor<S> transpose(const BasicTensor<S>& x, const std::vector<Index>& perm) {
  const Index r = x.rank();
  if (static_cast<Index>(perm.size()) != r) throw DimensionError("transpose: permutation rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  Shape out_shape(static_cast<std::size_t>(r));
  const Shape in_strides = x.strides();
  Shape gather_strides(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    const Index p = perm[static_cast<std::size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)]) throw DimensionError("transpose: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(p)];
    gather_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(p)];
  }
  BasicTensor<S> out(out_shape);
  const Index total = out.size();
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index flat = 0; flat < total; ++flat) {
    out[flat] = x[src];
    for (Index ax = r - 1; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < out_shape[a]) {
        src += gather_strides[a];
        break;
      }
      src -= gather_strides[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

/// Matrix transpose (last two axes swapped for rank 2).
template <typename S>
BasicTensor<S> transpose(const BasicTensor<S>& x) {
  if (x.rank() != 2) throw DimensionError("transpose(): rank-2 input required, got " + to_string(x.shape()));
  return transpose(x, {1, 0});
}

template <typename S>
BasicTensor<S> concat(const std::vector<BasicTensor<S>>& parts, Index axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Index ax = parts.front().normalize_axis(axis);
  Shape out_shape = parts.front().shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts.front().rank()) throw DimensionError("concat: rank mismatch");
    for (Index i = 0; i < p.rank(); ++i)
      if (i != ax && p.shape()[static_cast<std::size_t>(i)] != parts.front().shape()[static_cast<std::size_t>(i)])
        throw DimensionError("concat: extents differ off the concatenation axis: " + to_string(p.shape()) + " vs " +
                             to_string(parts.front().shape()));
    out_shape[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
  }
  BasicTensor<S> out(out_shape);
  Index outer = 1;
  for (Index i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  Index inner = 1;
  for (Index i = ax + 1; i < static_cast<Index>(out_shape.size()); ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const Index out_block = out_shape[static_cast<std::size_t>(ax)] * inner;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index block = p.shape()[static_cast<std::size_t>(ax)] * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * block, block, out.data() + o * out_block + offset);
    offset += block;
  }
  return out;
}

template <typename S>
BasicTensor<S> concat(std::initializer_list<BasicTensor<S>> parts, Index axis) {
  return concat(std::vector<BasicTensor<S>>(parts), axis);
}

/// Half-open range [start, stop) along one axis.
template <typename S>
BasicTensor<S> slice(const BasicTensor<S>& x, Index axis, Index start, Index stop) {
  const Index ax = x.normalize_axis(axis);
  const Index extent = x.shape()[static_cast<std::size_t>(ax)];
  if (start < 0 || stop > extent || start > stop)
    throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(stop) + ") out of bounds for axis " +
                         std::to_string(axis) + " of " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = stop - start;
  BasicTensor<S> out(out_shape);
  Index outer = 1;
  for (Index i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  Index inner = 1;
  for (Index i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
  const Index len = (stop - start) * inner;
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.data() + o * extent * inner + start * inner, len, out.data() + o * len);
  return out;
}

/// Splits a channel-first image batch (b, c, h, w) into non-overlapping p x p
/// patches, returning (b, (h/p)(w/p), p*p*c) with features ordered (ph, pw, c).
template <typename S>
BasicTensor<S> patchify(const BasicTensor<S>& images, Index patch) {
  if (images.rank() != 4) throw DimensionError("patchify: expected (b,c,h,w), got " + to_string(images.shape()));
  const Index b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (patch <= 0 || h % patch != 0 || w % patch != 0)
    throw DimensionError("patchify: patch size " + std::to_string(patch) + " does not tile " + to_string(images.shape()));
  const Index gh = h / patch, gw = w / patch;
  BasicTensor<S> out({b, gh * gw, patch * patch * c});
  for (Index n = 0; n < b; ++n)
    for (Index i = 0; i < gh; ++i)
      for (Index j = 0; j < gw; ++j)
        for (Index pi = 0; pi < patch; ++pi)
          for (Index pj = 0; pj < patch; ++pj)
            for (Index ch = 0; ch < c; ++ch)
              out(n, i * gw + j, (pi * patch + pj) * c + ch) = images(n, ch, i * patch + pi, j * patch + pj);
  return out;
}

template <typename S>
S max_abs_diff(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff: shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  if (a.size() == 0) return S(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace difflab
