#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/autodiff/tape.hpp"

namespace difflab::optim {

using ad::GradientStore;
using ad::Parameter;
using ad::Tape;
using ad::Var;

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Updates every trainable parameter that has a gradient in `grads`.
  virtual void step(const std::vector<Parameter*>& params, const GradientStore& grads) = 0;
  virtual double learning_rate() const = 0;
  std::int64_t steps() const { return steps_; }

 protected:
  std::int64_t steps_ = 0;
};

/// g_t = -lr grad + momentum g_{t-1}, x_t = x_{t-1} + g_t, with g_0 = 0.
class SGD final : public Optimizer {
 public:
  explicit SGD(double lr = 1e-3, double momentum = 0.0);
  void step(const std::vector<Parameter*>& params, const GradientStore& grads) override;
  double learning_rate() const override { return lr_; }
  const Tensor& buffer(const Parameter& p) const { return buffers_.at(p.id()); }

 private:
  double lr_, momentum_;
  std::map<ad::ParamId, Tensor> buffers_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// true: AdamW, x -= lr wd x outside the adaptive step.
  /// false: L2 penalty wd ||x||^2 whose gradient 2 wd x enters the moments.
  bool decoupled = false;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(AdamOptions options = {});
  void step(const std::vector<Parameter*>& params, const GradientStore& grads) override;
  double learning_rate() const override { return options_.lr; }
  const AdamOptions& options() const { return options_; }

 private:
  struct Slots {
    Tensor m, v;
  };
  AdamOptions options_;
  std::map<ad::ParamId, Slots> slots_;
};

/// {"name": "sgd"|"adam"|"adamw", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay"}
std::unique_ptr<Optimizer> make_optimizer(const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Regularization

/// sum of ||w||^2 over the parameters
Var l2_penalty(Tape& tape, const std::vector<Parameter*>& params);
/// sum of |w|; the subgradient at 0 is 0
Var l1_penalty(Tape& tape, const std::vector<Parameter*>& params);

/// w = a * b with the sparsity-inducing penalty ||a||^2 + ||b||^2.
class SpredWeight {
 public:
  /// Starts from a = sign(w) sqrt|w|, b = sqrt|w|, so a * b = w.
  SpredWeight(const std::string& name, const Tensor& w);
  Var weight(Tape& tape) const;
  Var penalty(Tape& tape) const;
  Tensor value() const;
  std::vector<Parameter*> parameters() { return {&a_, &b_}; }

 private:
  Parameter a_, b_;
};

/// Rescales all gradients together so their global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(GradientStore& grads, double max_norm);

// ---------------------------------------------------------------------------
// Early stopping

/// Stops at epoch t once a_t <= a_i for every i in t-1, ..., t-k (ties stop).
class EarlyStopping {
 public:
  explicit EarlyStopping(Index patience);
  /// Records a_t; true when training should stop.
  bool update(double metric);
  bool stopped() const { return stopped_; }
  /// Epoch to roll back to once stopped: t - k.
  std::optional<Index> rollback_epoch() const;
  const std::vector<double>& history() const { return history_; }

 private:
  Index patience_;
  std::vector<double> history_;
  bool stopped_ = false;
};

}  // namespace difflab::optim
