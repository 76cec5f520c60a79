#include "difflab/nn/layers.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"

namespace difflab::nn {

Tensor fan_in_uniform(Shape shape, Index fan_in, Rng& rng) {
  if (fan_in <= 0) throw DimensionError("fan-in must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

namespace {

// Applies a (c, c') matrix to the last axis of x.
Var affine_last_axis(Var x, Var w, const std::optional<Var>& b) {
  const Shape in = x.shape();
  const Index c = w.dim(0);
  if (in.empty() || in.back() != c)
    throw DimensionError("linear layer expects last axis " + std::to_string(c) + ", got shape " + to_string(in));
  Var flat = in.size() == 2 ? x : ad::reshape(x, {-1, c});
  Var y = ad::matmul(flat, w);
  if (b) y = ad::add(y, *b);
  if (in.size() != 2) {
    Shape out = in;
    out.back() = w.dim(1);
    y = ad::reshape(y, out);
  }
  return y;
}

void check_positive(Index width, const char* what) {
  if (width <= 0) throw DimensionError(std::string(what) + " must be positive, got " + std::to_string(width));
}

}  // namespace

// ---------------------------------------------------------------------------

Linear::Linear(Index in, Index out, Rng& rng, Activation phi, bool bias) : phi_(phi) {
  check_positive(in, "input width");
  check_positive(out, "output width");
  weight_ = Parameter("weight", fan_in_uniform({in, out}, in, rng));
  if (bias) bias_.emplace("bias", fan_in_uniform({out}, in, rng));
}

Linear::Linear(Parameter weight, std::optional<Parameter> bias, Activation phi)
    : weight_(std::move(weight)), bias_(std::move(bias)), phi_(phi) {
  if (weight_.value().rank() != 2) throw DimensionError("linear weight must be (c, c'), got " + to_string(weight_.shape()));
  if (bias_ && bias_->shape() != Shape{weight_.value().dim(1)})
    throw DimensionError("linear bias shape " + to_string(bias_->shape()) + " does not match weight " +
                         to_string(weight_.shape()));
}

Var Linear::operator()(Var x) const {
  Tape& tape = x.tape();
  std::optional<Var> b;
  if (bias_) b = tape.param(*bias_);
  return activate(affine_last_axis(x, tape.param(weight_), b), phi_);
}

std::vector<Parameter*> Linear::parameters() {
  std::vector<Parameter*> ps{&weight_};
  if (bias_) ps.push_back(&*bias_);
  return ps;
}

Index Linear::parameter_count() const { return weight_.value().size() + (bias_ ? bias_->value().size() : 0); }

MLP::MLP(const std::vector<Index>& widths, Rng& rng, Activation hidden, Activation output) {
  if (widths.size() < 2) throw DimensionError("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(widths[i], widths[i + 1], rng, last ? output : hidden);
    const std::string prefix = "layers." + std::to_string(i) + ".";
    layers_.back().weight().set_name(prefix + "weight");
    layers_.back().bias()->set_name(prefix + "bias");
  }
}

Var MLP::operator()(Var x) const {
  for (const Linear& layer : layers_) x = layer(x);
  return x;
}

std::vector<Parameter*> MLP::parameters() {
  std::vector<Parameter*> ps;
  for (Linear& layer : layers_)
    for (Parameter* p : layer.parameters()) ps.push_back(p);
  return ps;
}

nlohmann::json MLP::spec() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const Linear& layer : layers_)
    layers.push_back({{"kind", "linear"},
                      {"in", layer.in_features()},
                      {"out", layer.out_features()},
                      {"activation", activation_name(layer.activation())}});
  return {{"kind", "mlp"}, {"layers", layers}};
}

// ---------------------------------------------------------------------------

PReLU::PReLU(Index features, double initial_slope)
    : slope_("slope", Tensor::full({features}, initial_slope)) {
  check_positive(features, "PReLU width");
}

Var PReLU::operator()(Var x) const { return ad::prelu(x, x.tape().param(slope_)); }

GLU::GLU(Index in, Index out, Rng& rng, bool bias) {
  check_positive(in, "input width");
  check_positive(out, "output width");
  w1_ = Parameter("gate_weight", fan_in_uniform({in, out}, in, rng));
  w2_ = Parameter("value_weight", fan_in_uniform({in, out}, in, rng));
  if (bias) {
    b1_.emplace("gate_bias", fan_in_uniform({out}, in, rng));
    b2_.emplace("value_bias", fan_in_uniform({out}, in, rng));
  }
}

Var GLU::operator()(Var x) const {
  Tape& tape = x.tape();
  if (w1_.shape() != w2_.shape())
    throw DimensionError("GLU projections differ: " + to_string(w1_.shape()) + " vs " + to_string(w2_.shape()));
  std::optional<Var> b1, b2;
  if (b1_) b1 = tape.param(*b1_);
  if (b2_) b2 = tape.param(*b2_);
  Var gate = ad::sigmoid(affine_last_axis(x, tape.param(w1_), b1));
  return ad::mul(gate, affine_last_axis(x, tape.param(w2_), b2));
}

std::vector<Parameter*> GLU::parameters() {
  std::vector<Parameter*> ps{&w1_, &w2_};
  if (b1_) ps.push_back(&*b1_);
  if (b2_) ps.push_back(&*b2_);
  return ps;
}

// ---------------------------------------------------------------------------

Dropout::Dropout(double keep) : keep_(keep) {
  if (!(keep > 0.0 && keep <= 1.0))
    throw ContractError("dropout keep-probability must lie in (0, 1], got " + std::to_string(keep));
}

Var Dropout::operator()(Var x, Rng& rng, bool train) const {
  if (!train || keep_ == 1.0) return x;
  Tensor mask(x.shape());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(keep_) ? 1.0 / keep_ : 0.0;
  return ad::mul(x, mask);
}

Tensor mc_average(const std::function<Var(Tape&, Rng&)>& forward, int k, Rng& rng) {
  if (k < 1) throw ContractError("mc dropout needs k >= 1 passes");
  Tensor total;
  for (int i = 0; i < k; ++i) {
    Tape tape;
    const Tensor y = forward(tape, rng).value();
    total = i == 0 ? y : total + y;
  }
  return total * (1.0 / k);
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(Index channels, double momentum, double eps)
    : alpha_("alpha", Tensor::ones({channels})),
      beta_("beta", Tensor::zeros({channels})),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::ones({channels})),
      momentum_(momentum),
      eps_(eps) {
  check_positive(channels, "batch norm width");
  if (!(eps > 0.0)) throw ContractError("batch norm epsilon must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("batch norm momentum must lie in [0, 1]");
}

Var BatchNorm::operator()(Var x, bool train) {
  const Index c = alpha_.value().size();
  if (x.value().rank() < 2 || x.shape().back() != c)
    throw DimensionError("batch norm expects (..., " + std::to_string(c) + "), got " + to_string(x.shape()));
  Tape& tape = x.tape();
  Var a = tape.param(alpha_), b = tape.param(beta_);
  if (!train) {
    Tensor inv_std = running_var_;
    for (Index j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(running_var_[j] + eps_);
    Var centered = ad::add(x, -running_mean_);
    return ad::add(ad::mul(ad::mul(centered, inv_std), a), b);
  }
  const Index n = x.value().size() / c;
  if (n < 2) throw ContractError("batch norm in train mode needs at least 2 samples per channel, got " + std::to_string(n));
  std::vector<Index> axes(static_cast<std::size_t>(x.value().rank() - 1));
  std::iota(axes.begin(), axes.end(), 0);
  Var mu = ad::mean(x, axes, true);
  Var centered = ad::sub(x, mu);
  Var var = ad::mean(ad::square(centered), axes, true);
  Var xhat = ad::div(centered, ad::sqrt(ad::shift(var, eps_)));

  const Tensor batch_mean = mu.value().reshaped({c});
  const Tensor batch_var = var.value().reshaped({c});
  running_mean_ = running_mean_ * momentum_ + batch_mean * (1.0 - momentum_);
  running_var_ = running_var_ * momentum_ + batch_var * (1.0 - momentum_);
  return ad::add(ad::mul(xhat, a), b);
}

LayerNorm::LayerNorm(Shape normalized_shape, double eps)
    : shape_(std::move(normalized_shape)),
      alpha_("alpha", Tensor::ones(shape_)),
      beta_("beta", Tensor::zeros(shape_)),
      eps_(eps) {
  if (shape_.empty()) throw DimensionError("layer norm needs at least one normalized axis");
  for (Index e : shape_) check_positive(e, "layer norm extent");
  if (!(eps > 0.0)) throw ContractError("layer norm epsilon must be positive");
}

Var LayerNorm::operator()(Var x) const {
  const Shape& in = x.shape();
  const auto k = static_cast<Index>(shape_.size());
  if (static_cast<Index>(in.size()) < k || !std::equal(shape_.begin(), shape_.end(), in.end() - k))
    throw DimensionError("layer norm over " + to_string(shape_) + " cannot apply to " + to_string(in));
  std::vector<Index> axes;
  for (Index i = static_cast<Index>(in.size()) - k; i < static_cast<Index>(in.size()); ++i) axes.push_back(i);
  Tape& tape = x.tape();
  Var centered = ad::sub(x, ad::mean(x, axes, true));
  Var var = ad::mean(ad::square(centered), axes, true);
  Var xhat = ad::div(centered, ad::sqrt(ad::shift(var, eps_)));
  return ad::add(ad::mul(xhat, tape.param(alpha_)), tape.param(beta_));
}

RMSNorm::RMSNorm(Index features, double eps) : alpha_("alpha", Tensor::ones({features})), eps_(eps) {
  check_positive(features, "RMSNorm width");
  if (!(eps > 0.0)) throw ContractError("RMSNorm epsilon must be positive");
}

Var RMSNorm::operator()(Var x) const {
  const Index c = alpha_.value().size();
  if (x.value().rank() < 1 || x.shape().back() != c)
    throw DimensionError("RMSNorm expects last axis " + std::to_string(c) + ", got " + to_string(x.shape()));
  const Index last = x.value().rank() - 1;
  Var rms = ad::sqrt(ad::shift(ad::mean(ad::square(x), {last}, true), eps_));
  return ad::mul(ad::div(x, rms), x.tape().param(alpha_));
}

Var residual(const std::function<Var(Var)>& f, Var x, const std::function<Var(Var)>& adapter) {
  Var fx = f(x);
  if (adapter) return ad::add(fx, adapter(x));
  if (fx.shape() != x.shape())
    throw DimensionError("residual branch changes shape " + to_string(x.shape()) + " -> " + to_string(fx.shape()) +
                         " and no adapter was given");
  return ad::add(fx, x);
}

Embedding::Embedding(Index vocabulary, Index width, Rng& rng) {
  check_positive(vocabulary, "vocabulary size");
  check_positive(width, "embedding width");
  table_ = Parameter("embedding", rng.normal_tensor({vocabulary, width}, 0.0, 1.0 / std::sqrt(double(width))));
}

Var Embedding::operator()(Tape& tape, const std::vector<Index>& ids) const {
  const Index n = vocabulary();
  for (Index id : ids)
    if (id < 0 || id >= n)
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(n));
  return ad::gather_rows(tape.param(table_), ids);
}

// ---------------------------------------------------------------------------

namespace {

void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double read_f64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw ConfigError("checkpoint blob is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes[i]} << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const nlohmann::json& model_spec,
                     const std::vector<Parameter*>& params) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  std::set<std::string> seen;
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw ConfigError("cannot write " + (dir / "params.bin").string());
  for (const Parameter* p : params) {
    if (!seen.insert(p->name()).second) throw ContractError("duplicate parameter name '" + p->name() + "'");
    entries.push_back({{"name", p->name()}, {"shape", p->shape()}, {"trainable", p->trainable()}});
    for (double v : p->value().values()) write_f64_le(blob, v);
  }
  nlohmann::json manifest{{"format", "difflab-checkpoint"},
                          {"version", 1},
                          {"dtype", "f64-le"},
                          {"model", model_spec},
                          {"parameters", entries}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

nlohmann::json load_checkpoint(const std::filesystem::path& dir, const std::vector<Parameter*>& params) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw ConfigError("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw ConfigError("missing " + (dir / "params.bin").string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const auto name = entries[i].at("name").get<std::string>();
    const auto shape = entries[i].at("shape").get<Shape>();
    if (name != p.name() || shape != p.shape())
      throw ConfigError("checkpoint entry " + std::to_string(i) + " is " + name + to_string(shape) + ", model expects " +
                        p.name() + to_string(p.shape()));
    for (Index j = 0; j < p.value().size(); ++j) p.value()[j] = read_f64_le(blob);
  }
  if (blob.peek() != std::char_traits<char>::eof()) throw ConfigError("checkpoint blob has trailing bytes");
  return manifest.at("model");
}

}  // namespace difflab::nn
