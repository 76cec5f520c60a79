#include "difflab/conv/conv.hpp"

#include <cmath>
#include <limits>

#include "difflab/autodiff/ops.hpp"
#include "difflab/kernels.hpp"

namespace difflab::conv {

void ConvSpec::validate() const {
  if (rank != 1 && rank != 2) throw ContractError("conv: rank must be 1 or 2");
  if (half_width < 0) throw ContractError("conv: half width must be non-negative");
  if (in_channels < 1 || out_channels < 1) throw ContractError("conv: channel counts must be positive");
  if (stride < 1 || dilation < 1) throw ContractError("conv: stride and dilation must be >= 1");
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0)
    throw ContractError("conv: groups must divide both channel counts");
  if (causal && rank != 1) throw ContractError("conv: causal convolution is defined for rank 1 only");
  if (causal && padding != Padding::kSame) throw ContractError("conv: causal convolution pads on the left only");
}

Shape ConvSpec::weight_shape() const {
  const Index s = kernel_size();
  if (rank == 1) return {s, in_channels / groups, out_channels};
  return {s, s, in_channels / groups, out_channels};
}

Geometry Geometry::from_spec(const ConvSpec& spec) {
  spec.validate();
  Geometry g;
  const Index s = spec.kernel_size();
  const Index pad = spec.padding == Padding::kValid ? 0 : spec.half_width * spec.dilation;
  g.kw = s;
  g.dil_w = spec.dilation;
  g.stride_w = spec.stride;
  g.pad_left = g.pad_right = pad;
  g.groups = spec.groups;
  g.circular = spec.padding == Padding::kCircular;
  if (spec.causal) {
    g.pad_left = (s - 1) * spec.dilation;
    g.pad_right = 0;
  }
  if (spec.rank == 2) {
    g.kh = s;
    g.dil_h = spec.dilation;
    g.stride_h = spec.stride;
    g.pad_top = g.pad_bottom = pad;
  }
  return g;
}

namespace {

struct Extents {
  Index n, h, w, c, cg, co, cog, oh, ow;
};

Extents check(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g) {
  if (x.rank() != 4) throw DimensionError("conv2d: input must be (n,h,w,c), got " + to_string(x.shape()));
  if (w.rank() != 4 || w.dim(0) != g.kh || w.dim(1) != g.kw)
    throw DimensionError("conv2d: weight " + to_string(w.shape()) + " does not match kernel " +
                         std::to_string(g.kh) + "x" + std::to_string(g.kw));
  Extents e{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), 0, 0, 0};
  if (e.c != e.cg * g.groups)
    throw DimensionError("conv2d: input has " + std::to_string(e.c) + " channels, weight expects " +
                         std::to_string(e.cg * g.groups));
  if (e.co % g.groups != 0) throw DimensionError("conv2d: output channels not divisible by groups");
  e.cog = e.co / g.groups;
  if (bias && (bias->rank() != 1 || bias->dim(0) != e.co))
    throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " for " + std::to_string(e.co) + " channels");
  if (g.full_height(e.h) < 1 || g.full_width(e.w) < 1)
    throw DimensionError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  if (g.circular && (g.pad_top > e.h || g.pad_left > e.w))
    throw DimensionError("conv2d: circular padding wider than the input");
  e.oh = g.out_height(e.h);
  e.ow = g.out_width(e.w);
  return e;
}

// Maps a padded coordinate to an input row/column, or -1 for zero padding.
Index source(Index pos, Index extent, bool circular) {
  if (pos >= 0 && pos < extent) return pos;
  if (!circular) return -1;
  return ((pos % extent) + extent) % extent;
}

// Visits every (tap, input pixel) pair feeding the stride-1 output position (i, j).
template <typename Fn>
void for_each_tap(const Geometry& g, const Extents& e, Index i, Index j, Fn&& fn) {
  for (Index a = 0; a < g.kh; ++a) {
    const Index yi = source(i - g.pad_top + a * g.dil_h, e.h, g.circular);
    if (yi < 0) continue;
    for (Index b = 0; b < g.kw; ++b) {
      const Index xj = source(j - g.pad_left + b * g.dil_w, e.w, g.circular);
      if (xj < 0) continue;
      fn(a, b, yi, xj);
    }
  }
}

void compute_pixel(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g,
                   const Extents& e, Index n, Index i, Index j, double* out) {
  for (Index z = 0; z < e.co; ++z) out[z] = bias ? (*bias)[z] : 0.0;
  for_each_tap(g, e, i, j, [&](Index a, Index b, Index yi, Index xj) {
    const double* px = x.data() + ((n * e.h + yi) * e.w + xj) * e.c;
    const double* pw = w.data() + (a * g.kw + b) * e.cg * e.co;
    for (Index z = 0; z < e.co; ++z) {
      const Index base = (z / e.cog) * e.cg;
      double acc = out[z];
      for (Index c = 0; c < e.cg; ++c) acc += pw[c * e.co + z] * px[base + c];
      out[z] = acc;
    }
  });
}

}  // namespace

Tensor conv2d_reference(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g) {
  const Extents e = check(x, w, bias, g);
  const Index fh = g.full_height(e.h), fw = g.full_width(e.w);
  Tensor full({e.n, fh, fw, e.co});
  for (Index n = 0; n < e.n; ++n)
    for (Index i = 0; i < fh; ++i)
      for (Index j = 0; j < fw; ++j) compute_pixel(x, w, bias, g, e, n, i, j, full.data() + ((n * fh + i) * fw + j) * e.co);
  if (g.stride_h == 1 && g.stride_w == 1) return full;
  Tensor out({e.n, e.oh, e.ow, e.co});
  for (Index n = 0; n < e.n; ++n)
    for (Index i = 0; i < e.oh; ++i)
      for (Index j = 0; j < e.ow; ++j)
        std::copy_n(full.data() + ((n * fh + i * g.stride_h) * fw + j * g.stride_w) * e.co, e.co,
                    out.data() + ((n * e.oh + i) * e.ow + j) * e.co);
  return out;
}

Tensor conv2d_strided(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g) {
  const Extents e = check(x, w, bias, g);
  Tensor out({e.n, e.oh, e.ow, e.co});
  for (Index n = 0; n < e.n; ++n)
    for (Index i = 0; i < e.oh; ++i)
      for (Index j = 0; j < e.ow; ++j)
        compute_pixel(x, w, bias, g, e, n, i * g.stride_h, j * g.stride_w,
                      out.data() + ((n * e.oh + i) * e.ow + j) * e.co);
  return out;
}

namespace {

class ConvPrimitive final : public ad::Primitive {
 public:
  ConvPrimitive(Geometry g, bool one_d) : g_(g), one_d_(one_d) {}
  std::string_view name() const override { return one_d_ ? "conv1d" : "conv2d"; }

  Tensor forward(std::span<const Tensor> in) const override {
    const Tensor x = as_image(in[0]);
    const Tensor w = as_kernel(in[1]);
    return from_image(conv2d_strided(x, w, bias_of(in), g_));
  }

  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t arg) const override {
    if (arg == 2) return sum(adj.reshaped({-1, adj.dim(-1)}), {0});
    const Tensor x = as_image(in[0]);
    const Tensor w = as_kernel(in[1]);
    const Extents e = check(x, w, bias_of(in), g_);
    const Tensor a = adj.reshaped({e.n, e.oh, e.ow, e.co});
    Tensor grad(arg == 0 ? x.shape() : w.shape());
    for (Index n = 0; n < e.n; ++n)
      for (Index oi = 0; oi < e.oh; ++oi)
        for (Index oj = 0; oj < e.ow; ++oj) {
          const double* pa = a.data() + ((n * e.oh + oi) * e.ow + oj) * e.co;
          for_each_tap(g_, e, oi * g_.stride_h, oj * g_.stride_w, [&](Index ta, Index tb, Index yi, Index xj) {
            const Index xoff = ((n * e.h + yi) * e.w + xj) * e.c;
            const Index woff = (ta * g_.kw + tb) * e.cg * e.co;
            for (Index z = 0; z < e.co; ++z) {
              const Index base = (z / e.cog) * e.cg;
              for (Index c = 0; c < e.cg; ++c) {
                if (arg == 0)
                  grad[xoff + base + c] += w[woff + c * e.co + z] * pa[z];
                else
                  grad[woff + c * e.co + z] += x[xoff + base + c] * pa[z];
              }
            }
          });
        }
    return grad.reshaped(in[arg].shape());
  }

  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> t) const override {
    const Tensor x = as_image(in[0]);
    const Tensor w = as_kernel(in[1]);
    std::optional<Tensor> tb;
    if (in.size() == 3) tb = t[2];
    Tensor out = conv2d_strided(as_image(t[0]), w, std::nullopt, g_);
    out.array() += conv2d_strided(x, as_kernel(t[1]), tb, g_).array();
    return from_image(out);
  }

 private:
  Tensor as_image(const Tensor& x) const {
    if (!one_d_) return x;
    if (x.rank() != 3) throw DimensionError("conv1d: input must be (n,t,c), got " + to_string(x.shape()));
    return x.reshaped({x.dim(0), 1, x.dim(1), x.dim(2)});
  }
  Tensor as_kernel(const Tensor& w) const {
    if (!one_d_) return w;
    if (w.rank() != 3) throw DimensionError("conv1d: weight must be (s,c/g,c'), got " + to_string(w.shape()));
    return w.reshaped({1, w.dim(0), w.dim(1), w.dim(2)});
  }
  Tensor from_image(const Tensor& y) const {
    return one_d_ ? y.reshaped({y.dim(0), y.dim(2), y.dim(3)}) : y;
  }
  static std::optional<Tensor> bias_of(std::span<const Tensor> in) {
    return in.size() == 3 ? std::optional<Tensor>(in[2]) : std::nullopt;
  }

  Geometry g_;
  bool one_d_;
};

class MaxPool final : public ad::Primitive {
 public:
  explicit MaxPool(Index window) : window_(window) {}
  std::string_view name() const override { return "max_pool2d"; }

  Tensor forward(std::span<const Tensor> in) const override {
    const Tensor& x = in[0];
    check_input(x);
    Tensor out(out_shape(x));
    visit(x, [&](Index o, Index src) { out[o] = x[src]; });
    return out;
  }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    Tensor g(in[0].shape());
    visit(in[0], [&](Index o, Index src) { g[src] += adj[o]; });
    return g;
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    Tensor r(out.shape());
    visit(in[0], [&](Index o, Index src) { r[o] = t[0][src]; });
    return r;
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.rank() != 4) throw DimensionError("max_pool2d: input must be (n,h,w,c), got " + to_string(x.shape()));
    if (window_ < 1 || window_ > x.dim(1) || window_ > x.dim(2))
      throw DimensionError("max_pool2d: window " + std::to_string(window_) + " exceeds extent " +
                           to_string(x.shape()));
  }
  Shape out_shape(const Tensor& x) const { return {x.dim(0), x.dim(1) / window_, x.dim(2) / window_, x.dim(3)}; }

  // Calls fn(output index, flat index of the first maximum in its window).
  template <typename Fn>
  void visit(const Tensor& x, Fn&& fn) const {
    const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const Index oh = h / window_, ow = w / window_;
    for (Index b = 0; b < n; ++b)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j)
          for (Index z = 0; z < c; ++z) {
            Index best = -1;
            for (Index a = 0; a < window_; ++a)
              for (Index d = 0; d < window_; ++d) {
                const Index src = ((b * h + i * window_ + a) * w + j * window_ + d) * c + z;
                if (best < 0 || x[src] > x[best]) best = src;
              }
            fn(((b * oh + i) * ow + j) * c + z, best);
          }
  }

  Index window_;
};

}  // namespace

ad::Var conv2d(ad::Var x, ad::Var w, std::optional<ad::Var> bias, const ConvSpec& spec) {
  if (spec.rank != 2) throw ContractError("conv2d: spec rank must be 2");
  auto prim = std::make_shared<const ConvPrimitive>(Geometry::from_spec(spec), false);
  if (bias) return x.tape().record(prim, {x, w, *bias});
  return x.tape().record(prim, {x, w});
}

ad::Var conv1d(ad::Var x, ad::Var w, std::optional<ad::Var> bias, const ConvSpec& spec) {
  if (spec.rank != 1) throw ContractError("conv1d: spec rank must be 1");
  auto prim = std::make_shared<const ConvPrimitive>(Geometry::from_spec(spec), true);
  if (bias) return x.tape().record(prim, {x, w, *bias});
  return x.tape().record(prim, {x, w});
}

ad::Var max_pool2d(ad::Var x, Index window) {
  return x.tape().record(std::make_shared<const MaxPool>(window), {x});
}

ad::Var global_pool(ad::Var x, PoolKind kind) {
  if (x.value().rank() != 4) throw DimensionError("global_pool: input must be (n,h,w,c), got " + to_string(x.shape()));
  return kind == PoolKind::kMean ? ad::mean(x, {1, 2}) : ad::max(x, {1, 2});
}

Tensor extract_patch(const Tensor& image, Index i, Index j, Index k, bool zero_pad) {
  if (image.rank() != 3) throw DimensionError("extract_patch: image must be (h,w,c), got " + to_string(image.shape()));
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (i < 0 || i >= h || j < 0 || j >= w) throw DimensionError("extract_patch: center outside the image");
  if (!zero_pad && (i < k || j < k || i + k >= h || j + k >= w))
    throw DimensionError("extract_patch: window of half-width " + std::to_string(k) + " at (" + std::to_string(i) +
                         "," + std::to_string(j) + ") leaves the image; enable zero padding");
  const Index s = 2 * k + 1;
  Tensor patch({s, s, c});
  for (Index a = 0; a < s; ++a)
    for (Index b = 0; b < s; ++b) {
      const Index yi = i - k + a, xj = j - k + b;
      if (yi < 0 || yi >= h || xj < 0 || xj >= w) continue;
      for (Index z = 0; z < c; ++z) patch(a, b, z) = image(yi, xj, z);
    }
  return patch;
}

PaddedBatch pad_and_mask(const std::vector<Tensor>& sequences) {
  if (sequences.empty()) throw ContractError("pad_and_mask: empty batch");
  const Index c = sequences.front().rank() == 2 ? sequences.front().dim(1) : -1;
  Index t_max = 0;
  for (const Tensor& s : sequences) {
    if (s.rank() != 2 || s.dim(1) != c)
      throw DimensionError("pad_and_mask: sequences must share shape (t," + std::to_string(c) + "), got " +
                           to_string(s.shape()));
    t_max = std::max(t_max, s.dim(0));
  }
  const auto b = static_cast<Index>(sequences.size());
  PaddedBatch batch{Tensor({b, t_max, c}), Tensor({b, t_max})};
  for (Index i = 0; i < b; ++i) {
    const Tensor& s = sequences[static_cast<std::size_t>(i)];
    std::copy_n(s.data(), s.size(), batch.values.data() + i * t_max * c);
    for (Index t = 0; t < s.dim(0); ++t) batch.mask(i, t) = 1.0;
  }
  return batch;
}

ad::Var masked_mean(ad::Var x, const Tensor& mask) {
  const Tensor& v = x.value();
  if (v.rank() != 3 || mask.rank() != 2 || mask.dim(0) != v.dim(0) || mask.dim(1) != v.dim(1))
    throw DimensionError("masked_mean: mask " + to_string(mask.shape()) + " does not match " + to_string(v.shape()));
  Tensor weights({v.dim(0), v.dim(1), 1});
  for (Index b = 0; b < v.dim(0); ++b) {
    double count = 0.0;
    for (Index t = 0; t < v.dim(1); ++t) count += mask(b, t);
    if (count == 0.0) throw DimensionError("masked_mean: sequence " + std::to_string(b) + " has no valid steps");
    for (Index t = 0; t < v.dim(1); ++t) weights(b, t, 0) = mask(b, t) / count;
  }
  return ad::sum(ad::mul(x, weights), {1});
}

Index receptive_field(Index kernel_size, const std::vector<Index>& dilations) {
  Index r = 1;
  for (Index d : dilations) r += (kernel_size - 1) * d;
  return r;
}

Conv::Conv(ConvSpec spec, Rng& rng, bool bias) : spec_(spec) {
  spec_.validate();
  const Shape ws = spec_.weight_shape();
  Index fan_in = spec_.in_channels / spec_.groups;
  for (int r = 0; r < spec_.rank; ++r) fan_in *= spec_.kernel_size();
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  weight_ = ad::Parameter("weight", rng.uniform_tensor(ws, -bound, bound));
  if (bias) bias_.emplace("bias", rng.uniform_tensor({spec_.out_channels}, -bound, bound));
}

ad::Var Conv::operator()(ad::Var x) const {
  ad::Tape& tape = x.tape();
  std::optional<ad::Var> b;
  if (bias_) b = tape.param(*bias_);
  return spec_.rank == 1 ? conv1d(x, tape.param(weight_), b, spec_) : conv2d(x, tape.param(weight_), b, spec_);
}

std::vector<ad::Parameter*> Conv::parameters() {
  std::vector<ad::Parameter*> ps{&weight_};
  if (bias_) ps.push_back(&*bias_);
  return ps;
}

Index Conv::parameter_count() const { return weight_.value().size() + (bias_ ? bias_->value().size() : 0); }

std::vector<std::string> primitive_names() { return {"conv1d", "conv2d", "max_pool2d"}; }

}  // namespace difflab::conv
