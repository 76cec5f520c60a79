#include "difflab/optim/losses.hpp"

#include <cmath>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"

namespace difflab::optim {

using difflab::to_string;

namespace {

void require_same_shape(const Var& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape())
    throw DimensionError(std::string(what) + ": prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
}

// (n, m) target rows for logits (n, m): one-hot from indices, or the rows as given.
Tensor target_rows(const Shape& logits, const Tensor& target) {
  if (logits.size() != 2) throw DimensionError("class losses expect (n, m) logits, got " + to_string(logits));
  if (target.rank() == 1 && target.dim(0) == logits[0]) {
    std::vector<Index> labels(static_cast<std::size_t>(target.size()));
    for (Index i = 0; i < target.size(); ++i) {
      const double v = target[i];
      if (v != std::floor(v)) throw DimensionError("class index " + std::to_string(v) + " is not an integer");
      labels[static_cast<std::size_t>(i)] = static_cast<Index>(v);
    }
    return one_hot(labels, logits[1]);
  }
  if (target.shape() != logits)
    throw DimensionError("class targets " + to_string(target.shape()) + " do not match logits " + to_string(logits));
  return target;
}

}  // namespace

LossKind loss_from_string(const std::string& name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "huber") return LossKind::kHuber;
  if (name == "hinge") return LossKind::kHinge;
  if (name == "ce_from_logits" || name == "cross_entropy") return LossKind::kCrossEntropy;
  if (name == "bce_from_logits") return LossKind::kBinaryCrossEntropy;
  if (name == "brier") return LossKind::kBrier;
  throw ConfigError("loss: unknown kind '" + name + "'");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse";
    case LossKind::kHuber: return "huber";
    case LossKind::kHinge: return "hinge";
    case LossKind::kCrossEntropy: return "ce_from_logits";
    case LossKind::kBinaryCrossEntropy: return "bce_from_logits";
    case LossKind::kBrier: return "brier";
  }
  return "?";
}

Var mse(Var pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  return ad::mean(ad::square(ad::add(pred, -target)));
}

Var huber(Var pred, const Tensor& target) {
  require_same_shape(pred, target, "huber");
  Var a = ad::abs(ad::add(pred, -target));
  Var excess = ad::relu(a - 1.0);
  Var clipped = a - excess;
  return ad::mean(0.5 * ad::square(clipped) + excess);
}

Var hinge(Var pred, const Tensor& target) {
  require_same_shape(pred, target, "hinge");
  for (double y : target.values())
    if (y != 1.0 && y != -1.0) throw DomainError("hinge targets must be -1 or +1");
  return ad::mean(ad::relu(1.0 - ad::mul(pred, target)));
}

Var cross_entropy(Var logits, const Tensor& target) {
  const Tensor t = target_rows(logits.shape(), target);
  const Index n = logits.shape()[0];
  Tensor mass = sum(t, {1});
  Var lse = ad::mul(ad::logsumexp(logits), mass);
  Var picked = ad::sum(ad::mul(logits, t), {1});
  return ad::scale(ad::sum(lse - picked), 1.0 / static_cast<double>(n));
}

Var binary_cross_entropy(Var logits, const Tensor& target) {
  require_same_shape(logits, target, "bce_from_logits");
  return ad::mean(ad::softplus(logits) - ad::mul(logits, target));
}

Var brier(Var probabilities, const Tensor& target) {
  const Tensor t = target_rows(probabilities.shape(), target);
  const Index n = probabilities.shape()[0];
  return ad::scale(ad::sum(ad::square(ad::add(probabilities, -t))), 1.0 / static_cast<double>(n));
}

Var loss(LossKind kind, Var pred, const Tensor& target) {
  switch (kind) {
    case LossKind::kMse: return mse(pred, target);
    case LossKind::kHuber: return huber(pred, target);
    case LossKind::kHinge: return hinge(pred, target);
    case LossKind::kCrossEntropy: return cross_entropy(pred, target);
    case LossKind::kBinaryCrossEntropy: return binary_cross_entropy(pred, target);
    case LossKind::kBrier: return brier(pred, target);
  }
  throw ContractError("unknown loss kind");
}

Tensor one_hot(const std::vector<Index>& labels, Index classes) {
  Tensor out({static_cast<Index>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Index c = labels[i];
    if (c < 0 || c >= classes)
      throw DimensionError("class index " + std::to_string(c) + " outside [0, " + std::to_string(classes) + ")");
    out(static_cast<Index>(i), c) = 1.0;
  }
  return out;
}

Tensor to_signed(const Tensor& labels) {
  return map(labels, [](double y) {
    if (y != 0.0 && y != 1.0) throw DomainError("binary labels must be 0 or 1");
    return 2.0 * y - 1.0;
  });
}

std::vector<Index> class_indices(const Tensor& target) {
  std::vector<Index> out;
  if (target.rank() == 1) {
    for (double v : target.values()) out.push_back(static_cast<Index>(v));
    return out;
  }
  if (target.rank() != 2) throw DimensionError("class targets must be (n) or (n, m)");
  const auto rows = target.matrix();
  for (Index i = 0; i < rows.rows(); ++i) {
    Index best = 0;
    rows.row(i).maxCoeff(&best);
    out.push_back(best);
  }
  return out;
}

}  // namespace difflab::optim
