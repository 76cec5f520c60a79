#pragma once

#include <string_view>

#include "difflab/autodiff/tape.hpp"

namespace difflab::nn {

enum class Activation { kIdentity, kRelu, kLeakyRelu, kSigmoid, kTanh, kSoftplus, kElu, kGelu, kSilu };

ad::Var activate(ad::Var x, Activation kind);
/// Accepts the lower-case names used in configs ("relu", "gelu", ...).
Activation activation_from_string(std::string_view name);
std::string_view activation_name(Activation kind);

}  // namespace difflab::nn
