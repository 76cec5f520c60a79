#include "difflab/optim/optimizers.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"

namespace difflab::optim {

namespace {

const Tensor* gradient_for(const Parameter& p, const GradientStore& grads) {
  if (!p.trainable() || !grads.contains(p)) return nullptr;
  const Tensor& g = grads[p];
  if (g.shape() != p.shape())
    throw DimensionError("gradient " + to_string(g.shape()) + " does not match parameter '" + p.name() + "' " +
                         to_string(p.shape()));
  return &g;
}

double number(const nlohmann::json& config, const char* key, double fallback) {
  if (!config.contains(key)) return fallback;
  const auto& v = config.at(key);
  if (!v.is_number()) throw ConfigError(std::string("optimizer.") + key + ": expected a number");
  return v.get<double>();
}

double in_range(const nlohmann::json& config, const char* key, double fallback, double lo, double hi, bool open_lo) {
  const double v = number(config, key, fallback);
  if (!(open_lo ? v > lo : v >= lo) || !(v < hi)) {
    char range[64];
    if (std::isinf(hi))
      std::snprintf(range, sizeof range, "%s", open_lo ? "must be positive" : "must be non-negative");
    else
      std::snprintf(range, sizeof range, "must be in %s%g, %g)", open_lo ? "(" : "[", lo, hi);
    throw ConfigError(std::string("optimizer.") + key + ": " + range);
  }
  return v;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

SGD::SGD(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw DomainError("sgd: learning rate must be positive");
  if (momentum < 0.0) throw DomainError("sgd: momentum must be non-negative");
}

void SGD::step(const std::vector<Parameter*>& params, const GradientStore& grads) {
  ++steps_;
  for (Parameter* p : params) {
    const Tensor* g = gradient_for(*p, grads);
    if (!g) continue;
    if (momentum_ == 0.0) {
      p->value().array() -= lr_ * g->array();
      continue;
    }
    auto [it, fresh] = buffers_.try_emplace(p->id(), Tensor::zeros(p->shape()));
    Tensor& buf = it->second;
    buf.array() = -lr_ * g->array() + momentum_ * buf.array();
    p->value().array() += buf.array();
  }
}

Adam::Adam(AdamOptions options) : options_(options) {
  if (!(options.lr > 0.0)) throw DomainError("adam: learning rate must be positive");
  if (!(options.beta1 > 0.0 && options.beta1 < 1.0) || !(options.beta2 > 0.0 && options.beta2 < 1.0))
    throw DomainError("adam: betas must lie in (0, 1)");
  if (options.weight_decay < 0.0) throw DomainError("adam: weight decay must be non-negative");
}

void Adam::step(const std::vector<Parameter*>& params, const GradientStore& grads) {
  ++steps_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    if (!p->trainable()) continue;
    const Tensor* g = gradient_for(*p, grads);
    if (!g && !(o.decoupled && o.weight_decay > 0.0)) continue;
    Tensor grad = g ? *g : Tensor::zeros(p->shape());
    Tensor& x = p->value();
    if (!o.decoupled && o.weight_decay > 0.0) grad.array() += 2.0 * o.weight_decay * x.array();
    auto [it, fresh] = slots_.try_emplace(p->id(), Slots{Tensor::zeros(p->shape()), Tensor::zeros(p->shape())});
    Slots& s = it->second;
    s.m.array() = o.beta1 * s.m.array() + (1.0 - o.beta1) * grad.array();
    s.v.array() = o.beta2 * s.v.array() + (1.0 - o.beta2) * grad.array().square();
    const Eigen::ArrayXd update = (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + o.eps);
    if (o.decoupled && o.weight_decay > 0.0) x.array() -= o.lr * o.weight_decay * x.array();
    x.array() -= o.lr * update;
  }
}

std::unique_ptr<Optimizer> make_optimizer(const nlohmann::json& config) {
  if (!config.is_object()) throw ConfigError("optimizer: expected an object");
  const std::string name = config.value("name", std::string("sgd"));
  if (name == "sgd") return std::make_unique<SGD>(in_range(config, "lr", 1e-3, 0.0, kInf, true),
                                                     in_range(config, "momentum", 0.0, 0.0, 1.0, false));
  if (name == "adam" || name == "adamw") {
    AdamOptions o;
    o.lr = in_range(config, "lr", o.lr, 0.0, kInf, true);
    o.beta1 = in_range(config, "beta1", o.beta1, 0.0, 1.0, false);
    o.beta2 = in_range(config, "beta2", o.beta2, 0.0, 1.0, false);
    o.eps = in_range(config, "eps", o.eps, 0.0, kInf, true);
    o.weight_decay = in_range(config, "weight_decay", 0.0, 0.0, kInf, false);
    o.decoupled = name == "adamw";
    return std::make_unique<Adam>(o);
  }
  throw ConfigError("optimizer.name: unknown optimizer '" + name + "'");
}

Var l2_penalty(Tape& tape, const std::vector<Parameter*>& params) {
  Var total = tape.constant(Tensor::scalar(0.0));
  for (Parameter* p : params) total = total + ad::sum(ad::square(tape.param(*p)));
  return total;
}

Var l1_penalty(Tape& tape, const std::vector<Parameter*>& params) {
  Var total = tape.constant(Tensor::scalar(0.0));
  for (Parameter* p : params) total = total + ad::sum(ad::abs(tape.param(*p)));
  return total;
}

SpredWeight::SpredWeight(const std::string& name, const Tensor& w)
    : a_(name + ".a", map(w, [](double v) { return (v < 0.0 ? -1.0 : 1.0) * std::sqrt(std::abs(v)); })),
      b_(name + ".b", map(w, [](double v) { return std::sqrt(std::abs(v)); })) {}

Var SpredWeight::weight(Tape& tape) const { return ad::mul(tape.param(a_), tape.param(b_)); }

Var SpredWeight::penalty(Tape& tape) const {
  return ad::sum(ad::square(tape.param(a_))) + ad::sum(ad::square(tape.param(b_)));
}

Tensor SpredWeight::value() const { return mul(a_.value(), b_.value()); }

double clip_grad_norm(GradientStore& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw DomainError("clip_grad_norm: max_norm must be positive");
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

EarlyStopping::EarlyStopping(Index patience) : patience_(patience) {
  if (patience < 1) throw DomainError("early stopping: patience must be at least 1");
}

bool EarlyStopping::update(double metric) {
  if (stopped_) return true;
  history_.push_back(metric);
  const auto t = static_cast<Index>(history_.size());
  if (t <= patience_) return false;
  for (Index i = t - patience_; i < t; ++i)
    if (metric > history_[static_cast<std::size_t>(i - 1)]) return false;
  stopped_ = true;
  return true;
}

std::optional<Index> EarlyStopping::rollback_epoch() const {
  if (!stopped_) return std::nullopt;
  return static_cast<Index>(history_.size()) - patience_;
}

}  // namespace difflab::optim
