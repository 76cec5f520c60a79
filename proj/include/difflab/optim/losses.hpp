#pragma once

#include <string>
#include <vector>

#include "difflab/autodiff/tape.hpp"

// Losses averaged over the mini-batch (the leading axis).
namespace difflab::optim {

using ad::Var;

enum class LossKind { kMse, kHuber, kHinge, kCrossEntropy, kBinaryCrossEntropy, kBrier };
LossKind loss_from_string(const std::string& name);
std::string to_string(LossKind kind);

/// Mean of (pred - target)^2 over every entry.
Var mse(Var pred, const Tensor& target);
/// 1/2 e^2 when |e| <= 1, |e| - 1/2 otherwise, with e = pred - target.
Var huber(Var pred, const Tensor& target);
/// max(0, 1 - y pred) for targets y in {-1, +1}.
Var hinge(Var pred, const Tensor& target);
/// -p_y + logsumexp(p) per row of logits (n, m). Targets are class indices (n)
/// or one-hot / soft rows (n, m).
Var cross_entropy(Var logits, const Tensor& target);
/// softplus(z) - y z for logits z and targets y in [0, 1].
Var binary_cross_entropy(Var logits, const Tensor& target);
/// Squared distance between probability rows (n, m) and one-hot targets.
Var brier(Var probabilities, const Tensor& target);

Var loss(LossKind kind, Var pred, const Tensor& target);

/// (n, m) one-hot rows; indices outside [0, m) raise DimensionError.
Tensor one_hot(const std::vector<Index>& labels, Index classes);
/// {0, 1} labels to {-1, +1}.
Tensor to_signed(const Tensor& labels);
/// Class indices from a (n) index tensor or from the argmax of (n, m) rows.
std::vector<Index> class_indices(const Tensor& target);

}  // namespace difflab::optim
