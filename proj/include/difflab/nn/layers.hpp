#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/autodiff/tape.hpp"
#include "difflab/nn/activation.hpp"
#include "difflab/random.hpp"

namespace difflab::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Uniform in +-sqrt(1/fan_in).
Tensor fan_in_uniform(Shape shape, Index fan_in, Rng& rng);

/// phi(X W + b) with W (c, c') and b (c').
class Linear {
 public:
  Linear(Index in, Index out, Rng& rng, Activation phi = Activation::kIdentity, bool bias = true);
  Linear(Parameter weight, std::optional<Parameter> bias, Activation phi = Activation::kIdentity);

  Var operator()(Var x) const;
  Index in_features() const { return weight_.value().dim(0); }
  Index out_features() const { return weight_.value().dim(1); }
  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }
  std::optional<Parameter>& bias() { return bias_; }
  Activation activation() const { return phi_; }
  std::vector<Parameter*> parameters();
  Index parameter_count() const;

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
  Activation phi_;
};

/// Stack of Linear layers; hidden layers use `hidden`, the last one `output`.
class MLP {
 public:
  MLP(const std::vector<Index>& widths, Rng& rng, Activation hidden = Activation::kRelu,
      Activation output = Activation::kIdentity);
  Var operator()(Var x) const;
  std::vector<Linear>& layers() { return layers_; }
  std::vector<Parameter*> parameters();
  nlohmann::json spec() const;

 private:
  std::vector<Linear> layers_;
};

/// LeakyReLU with a trainable slope per feature.
class PReLU {
 public:
  explicit PReLU(Index features, double initial_slope = 0.01);
  Var operator()(Var x) const;
  Parameter& slope() { return slope_; }
  std::vector<Parameter*> parameters() { return {&slope_}; }

 private:
  Parameter slope_;
};

/// sigma(X W1 + b1) * (X W2 + b2)
class GLU {
 public:
  GLU(Index in, Index out, Rng& rng, bool bias = true);
  Var operator()(Var x) const;
  Parameter& gate_weight() { return w1_; }
  Parameter& value_weight() { return w2_; }
  std::optional<Parameter>& gate_bias() { return b1_; }
  std::optional<Parameter>& value_bias() { return b2_; }
  std::vector<Parameter*> parameters();

 private:
  Parameter w1_, w2_;
  std::optional<Parameter> b1_, b2_;
};

/// Inverted dropout with keep-probability p: kept entries are scaled by 1/p
/// during training; evaluation is the identity.
class Dropout {
 public:
  explicit Dropout(double keep);
  Var operator()(Var x, Rng& rng, bool train) const;
  double keep() const { return keep_; }

 private:
  double keep_;
};

/// Monte Carlo dropout: the mean output of k stochastic forward passes.
Tensor mc_average(const std::function<Var(Tape&, Rng&)>& forward, int k, Rng& rng);

/// Batch normalization over every axis but the last (channels).
class BatchNorm {
 public:
  explicit BatchNorm(Index channels, double momentum = 0.01, double eps = 1e-5);
  /// Train mode uses batch statistics (biased variance) and updates the
  /// running estimates as r <- lambda r + (1 - lambda) batch.
  Var operator()(Var x, bool train);
  Parameter& alpha() { return alpha_; }
  Parameter& beta() { return beta_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }
  std::vector<Parameter*> parameters() { return {&alpha_, &beta_}; }

 private:
  Parameter alpha_, beta_;
  Tensor running_mean_, running_var_;
  double momentum_, eps_;
};

/// Standardizes over the trailing axes given by `normalized_shape`.
class LayerNorm {
 public:
  explicit LayerNorm(Shape normalized_shape, double eps = 1e-5);
  Var operator()(Var x) const;
  Parameter& alpha() { return alpha_; }
  Parameter& beta() { return beta_; }
  std::vector<Parameter*> parameters() { return {&alpha_, &beta_}; }
  Index parameter_count() const { return alpha_.value().size() + beta_.value().size(); }

 private:
  Shape shape_;
  Parameter alpha_, beta_;
  double eps_;
};

/// x / sqrt(mean(x^2) + eps) * alpha over the last axis.
class RMSNorm {
 public:
  explicit RMSNorm(Index features, double eps = 1e-5);
  Var operator()(Var x) const;
  Parameter& alpha() { return alpha_; }
  std::vector<Parameter*> parameters() { return {&alpha_}; }

 private:
  Parameter alpha_;
  double eps_;
};

/// f(x) + x, or f(x) + adapter(x) when f changes the shape.
Var residual(const std::function<Var(Var)>& f, Var x, const std::function<Var(Var)>& adapter = {});

class Embedding {
 public:
  Embedding(Index vocabulary, Index width, Rng& rng);
  /// (m) ids -> (m, e) rows; ids outside [0, vocabulary) raise VocabularyError.
  Var operator()(Tape& tape, const std::vector<Index>& ids) const;
  Index vocabulary() const { return table_.value().dim(0); }
  Index width() const { return table_.value().dim(1); }
  Parameter& table() { return table_; }
  std::vector<Parameter*> parameters() { return {&table_}; }

 private:
  Parameter table_;
};

/// Checkpoint: `manifest.json` (model spec plus parameter names and shapes in
/// declaration order) and `params.bin` (little-endian f64, same order).
void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& model_spec,
                     const std::vector<Parameter*>& params);
/// Restores values in place; names and shapes must match the manifest.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, const std::vector<Parameter*>& params);

}  // namespace difflab::nn
