#pragma once

#include <optional>
#include <vector>

#include "difflab/autodiff/tape.hpp"
#include "difflab/nn/activation.hpp"
#include "difflab/nn/layers.hpp"
#include "difflab/random.hpp"

// Attention over token matrices: a sequence of n tokens of width e is an
// (n, e) matrix, one token per row.
namespace difflab::attn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Stand-in for -infinity in additive masks.
inline constexpr double kMaskValue = -1e9;

/// (n, m) additive mask with kMaskValue wherever key j lies after query i,
/// where query i sits at absolute position offset + i.
Tensor causal_mask(Index n, Index m, Index offset = 0);
/// Adds the causal mask to square scores; non-square input raises DimensionError.
Var apply_causal_mask(Var scores);

/// Q K^T / sqrt(k)
Var scaled_scores(Var q, Var k);

/// ALiBi-style bias: one trainable scalar w per head, bias_ij = -(i - j) w.
class LinearBias {
 public:
  /// Slopes start at the geometric sequence 2^(-8 (h + 1) / heads).
  explicit LinearBias(Index heads);
  /// Offset template -(i - j) for queries at positions offset + i.
  static Tensor offsets(Index n, Index m, Index offset = 0);
  Var bias(Tape& tape, Index head, Index n, Index m, Index offset = 0) const;
  double slope(Index head) const { return slopes_.value()[head]; }
  Parameter& slopes() { return slopes_; }
  std::vector<Parameter*> parameters() { return {&slopes_}; }

 private:
  Parameter slopes_;
};

struct AttendOptions {
  bool causal = false;
  const LinearBias* linear_bias = nullptr;
  /// Keep-probability for dropout on the attention matrix (1 disables it).
  double attention_keep = 1.0;
  Rng* rng = nullptr;
};

/// Scaled dot-product attention softmax(Q K^T / sqrt(k) + bias) V for one head.
Var attend(Var q, Var k, Var v, const AttendOptions& options = {}, Index head = 0);

/// h heads with W_q, W_k (e,k), W_v (e,v) each, then W_o (h v, o). No biases.
class MultiHeadAttention {
 public:
  MultiHeadAttention(Index embed, Index heads, Index key, Index value, Index out, Rng& rng);

  Var operator()(Var x, const AttendOptions& options = {}) const;
  /// Queries from x, keys and values from z.
  Var cross(Var x, Var z, const AttendOptions& options = {}) const;

  Index embed() const { return embed_; }
  Index heads() const { return static_cast<Index>(wq_.size()); }
  Index key_width() const { return wq_.front().value().dim(1); }
  Index value_width() const { return wv_.front().value().dim(1); }
  Index out_width() const { return wo_.value().dim(1); }
  Parameter& wq(Index h) { return wq_[static_cast<std::size_t>(h)]; }
  Parameter& wk(Index h) { return wk_[static_cast<std::size_t>(h)]; }
  Parameter& wv(Index h) { return wv_[static_cast<std::size_t>(h)]; }
  const Parameter& wq(Index h) const { return wq_[static_cast<std::size_t>(h)]; }
  const Parameter& wk(Index h) const { return wk_[static_cast<std::size_t>(h)]; }
  const Parameter& wv(Index h) const { return wv_[static_cast<std::size_t>(h)]; }
  Parameter& wo() { return wo_; }
  const Parameter& wo() const { return wo_; }
  std::vector<Parameter*> parameters();
  Index parameter_count() const;

 private:
  Index embed_;
  std::vector<Parameter> wq_, wk_, wv_;
  Parameter wo_;
};

// ---------------------------------------------------------------------------
// Positional information

/// Rows [sin(w_0 i), cos(w_0 i), ..., sin(w_{e/2-1} i), cos(w_{e/2-1} i)] for
/// positions i = 0..n-1 with w_j = 10000^(-2j/e); e must be even.
Tensor sinusoidal_embedding(Index n, Index e);

/// Trainable (m, e) table; the first n rows are added to a length-n sequence.
class LearnedPositions {
 public:
  LearnedPositions(Index max_length, Index embed, Rng& rng);
  Var rows(Tape& tape, Index n) const;
  Parameter& table() { return table_; }
  std::vector<Parameter*> parameters() { return {&table_}; }

 private:
  Parameter table_;
};

// ---------------------------------------------------------------------------
// Transformer block

enum class Norm { kPre, kPost };

/// Residual MHA and token-wise MLP W2 phi(W1 x) (hidden width p, no biases),
/// each with a layer norm placed before (pre) or after (post) the residual sum.
class TransformerBlock {
 public:
  TransformerBlock(Index embed, Index heads, Rng& rng, Norm norm = Norm::kPre, Index hidden_factor = 4,
                   nn::Activation phi = nn::Activation::kGelu);
  Var operator()(Var x, const AttendOptions& options = {}) const;
  MultiHeadAttention& attention() { return mha_; }
  nn::Linear& mlp_in() { return w1_; }
  nn::Linear& mlp_out() { return w2_; }
  Norm norm() const { return norm_; }
  std::vector<Parameter*> parameters();

 private:
  Norm norm_;
  MultiHeadAttention mha_;
  nn::LayerNorm ln1_, ln2_;
  nn::Linear w1_, w2_;
};

/// Appends `registers` (r, e) rows and then the class token (e) to x (n, e) or
/// to every sequence of x (b, n, e). The class token ends up in the last row.
Var attach_tokens(Var x, Var class_token, std::optional<Var> registers = std::nullopt);
/// The class-token row of a block output: the last row.
Var class_token_row(Var h);

// ---------------------------------------------------------------------------
// Memory-efficient evaluation (plain tensors)

/// Attention of one query q (k) over keys K (m,k) and values V (m,v), processed
/// in consecutive chunks of the given sizes with a running max, normalized once
/// at the end. Sizes must be positive and sum to m.
Tensor chunked_attention(const Tensor& q, const Tensor& keys, const Tensor& values, const std::vector<Index>& chunks);

/// Keys and values seen so far, per head.
struct KVCache {
  std::vector<Tensor> keys;    // per head (t, k)
  std::vector<Tensor> values;  // per head (t, v)
  Index length() const { return keys.empty() ? 0 : keys.front().dim(0); }
};
KVCache empty_cache(const MultiHeadAttention& mha);

/// Appends the new token's keys and values and returns its causal attention
/// output (1, o), computing one new row of the attention matrix per head.
Tensor decode_step(const MultiHeadAttention& mha, KVCache& cache, const Tensor& token,
                   const LinearBias* linear_bias = nullptr);

// ---------------------------------------------------------------------------
// Linearized attention

enum class FeatureMap { kEluPlusOne, kQuadratic };

/// elu(x) + 1, or the outer-product expansion vec(x x^T) whose dot products
/// give (x^T y)^2.
Tensor feature_map(const Tensor& x, FeatureMap phi);
Var feature_map(Var x, FeatureMap phi);

/// Causal h_i = phi(q_i)^T S_i / phi(q_i)^T z_i evaluated by the recurrence
/// S_i = S_{i-1} + phi(k_i) v_i^T, z_i = z_{i-1} + phi(k_i), S_0 = 0, z_0 = 0.
/// A zero denominator raises NumericError.
Tensor linear_attention_recurrent(const Tensor& q, const Tensor& k, const Tensor& v, FeatureMap phi);
/// Same quantity from the masked (n, n) kernel matrix; differentiable.
Var linear_attention(Var q, Var k, Var v, FeatureMap phi, bool causal = true);

}  // namespace difflab::attn
