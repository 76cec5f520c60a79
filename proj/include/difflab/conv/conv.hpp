#pragma once

#include <optional>
#include <string>
#include <vector>

#include "difflab/autodiff/tape.hpp"
#include "difflab/random.hpp"

// Convolution and pooling over channel-last tensors: (n,t,c) sequences and
// (n,h,w,c) images.
namespace difflab::conv {

enum class Padding { kSame, kValid, kCircular };

struct ConvSpec {
  int rank = 2;
  Index half_width = 1;  // kernel size s = 2k + 1
  Index in_channels = 1;
  Index out_channels = 1;
  Index stride = 1;
  Index dilation = 1;
  Padding padding = Padding::kSame;
  bool causal = false;  // rank 1 only: left padding of (s - 1) * dilation
  Index groups = 1;     // in_channels gives depthwise convolution

  Index kernel_size() const { return 2 * half_width + 1; }
  void validate() const;
  /// Weight shape: (s, c/g, c') for rank 1, (s, s, c/g, c') for rank 2.
  Shape weight_shape() const;
};

/// Low-level geometry shared by the 1D and 2D kernels (1D runs as h = 1).
struct Geometry {
  Index kh = 1, kw = 1;
  Index pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  Index stride_h = 1, stride_w = 1;
  Index dil_h = 1, dil_w = 1;
  Index groups = 1;
  bool circular = false;

  static Geometry from_spec(const ConvSpec& spec);
  Index full_height(Index h) const { return h + pad_top + pad_bottom - dil_h * (kh - 1); }
  Index full_width(Index w) const { return w + pad_left + pad_right - dil_w * (kw - 1); }
  Index out_height(Index h) const { return (full_height(h) + stride_h - 1) / stride_h; }
  Index out_width(Index w) const { return (full_width(w) + stride_w - 1) / stride_w; }
};

// Plain tensor kernels. `bias` may be empty (size-0 optional).
/// Computes the stride-1 output and subsamples it.
Tensor conv2d_reference(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g);
/// Evaluates only the strided output positions.
Tensor conv2d_strided(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias, const Geometry& g);

// Differentiable forms.
ad::Var conv2d(ad::Var x, ad::Var w, std::optional<ad::Var> bias, const ConvSpec& spec);
ad::Var conv1d(ad::Var x, ad::Var w, std::optional<ad::Var> bias, const ConvSpec& spec);

/// Non-overlapping window max; trailing rows/columns that do not fill a window are dropped.
ad::Var max_pool2d(ad::Var x, Index window = 2);
enum class PoolKind { kMean, kMax };
/// (n,h,w,c) -> (n,c)
ad::Var global_pool(ad::Var x, PoolKind kind);

/// Window of half-width k around (i, j) of an (h,w,c) image. With zero_pad the
/// window may extend past the border and reads zeros there.
Tensor extract_patch(const Tensor& image, Index i, Index j, Index k, bool zero_pad);

struct PaddedBatch {
  Tensor values;  // (b, t_max, c)
  Tensor mask;    // (b, t_max), 1 on valid positions
};
PaddedBatch pad_and_mask(const std::vector<Tensor>& sequences);
/// Mean over valid time steps: (b,t,c) with mask (b,t) -> (b,c).
ad::Var masked_mean(ad::Var x, const Tensor& mask);

/// 1 + sum_l (s - 1) d_l for a stack of 1D layers.
Index receptive_field(Index kernel_size, const std::vector<Index>& dilations);

class Conv {
 public:
  Conv(ConvSpec spec, Rng& rng, bool bias = true);
  ad::Var operator()(ad::Var x) const;
  const ConvSpec& spec() const { return spec_; }
  ad::Parameter& weight() { return weight_; }
  const ad::Parameter& weight() const { return weight_; }
  std::optional<ad::Parameter>& bias() { return bias_; }
  std::vector<ad::Parameter*> parameters();
  Index parameter_count() const;

 private:
  ConvSpec spec_;
  ad::Parameter weight_;
  std::optional<ad::Parameter> bias_;
};

std::vector<std::string> primitive_names();

}  // namespace difflab::conv
