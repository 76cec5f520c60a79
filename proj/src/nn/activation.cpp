#include "difflab/nn/activation.hpp"

#include <array>
#include <string>
#include <utility>

#include "difflab/autodiff/ops.hpp"

namespace difflab::nn {

namespace {

constexpr std::array<std::pair<Activation, std::string_view>, 9> kNames{{
    {Activation::kIdentity, "identity"},
    {Activation::kRelu, "relu"},
    {Activation::kLeakyRelu, "leaky_relu"},
    {Activation::kSigmoid, "sigmoid"},
    {Activation::kTanh, "tanh"},
    {Activation::kSoftplus, "softplus"},
    {Activation::kElu, "elu"},
    {Activation::kGelu, "gelu"},
    {Activation::kSilu, "silu"},
}};

}  // namespace

ad::Var activate(ad::Var x, Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return ad::relu(x);
    case Activation::kLeakyRelu: return ad::leaky_relu(x);
    case Activation::kSigmoid: return ad::sigmoid(x);
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kSoftplus: return ad::softplus(x);
    case Activation::kElu: return ad::elu(x);
    case Activation::kGelu: return ad::gelu(x);
    case Activation::kSilu: return ad::silu(x);
  }
  return x;
}

Activation activation_from_string(std::string_view name) {
  for (const auto& [kind, n] : kNames)
    if (n == name) return kind;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  for (const auto& [k, n] : kNames)
    if (k == kind) return n;
  return "identity";
}

}  // namespace difflab::nn
