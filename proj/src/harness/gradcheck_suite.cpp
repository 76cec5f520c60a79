#include "difflab/harness/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "difflab/attention/attention.hpp"
#include "difflab/autodiff/ops.hpp"
#include "difflab/conv/conv.hpp"
#include "difflab/graph/graph.hpp"
#include "difflab/nn/layers.hpp"
#include "difflab/optim/losses.hpp"
#include "difflab/optim/optimizers.hpp"
#include "difflab/recurrent/recurrent.hpp"

namespace difflab::harness {

using ad::Parameter;
using ad::Tape;
using ad::Var;
using PPtr = std::shared_ptr<Parameter>;

namespace {

// Weighted sum with fixed, uneven weights so no output entry is left untested.
Var project(Var out) {
  Tensor w(out.shape());
  for (Index i = 0; i < w.size(); ++i) w[i] = std::cos(0.37 * static_cast<double>(i) + 0.11) + 0.05;
  return ad::sum(ad::mul(out, w));
}

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : rng_(Rng(seed).split("gradcheck")) {}

  Rng& rng() { return rng_; }

  PPtr uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    return std::make_shared<Parameter>("p", rng_.uniform_tensor(std::move(shape), lo, hi));
  }
  /// Magnitudes in [lo, hi] with random signs, away from the kink at zero.
  PPtr away_from_zero(Shape shape, double lo = 0.2, double hi = 1.2) {
    Tensor t = rng_.uniform_tensor(std::move(shape), lo, hi);
    for (Index i = 0; i < t.size(); ++i)
      if (rng_.bernoulli(0.5)) t[i] = -t[i];
    return std::make_shared<Parameter>("p", std::move(t));
  }
  /// Values at least 0.1 apart, shuffled, so maxima never tie under a probe.
  PPtr distinct(Shape shape) {
    Tensor t(std::move(shape));
    std::vector<Index> order(static_cast<std::size_t>(t.size()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_.engine());
    for (Index i = 0; i < t.size(); ++i)
      t[i] = 0.1 * static_cast<double>(order[static_cast<std::size_t>(i)]) - 0.05 * static_cast<double>(t.size());
    return std::make_shared<Parameter>("p", std::move(t));
  }

  void add(std::string name, ad::LossFn loss, std::vector<Parameter*> params) {
    cases_.push_back({std::move(name), std::move(loss), std::move(params)});
  }
  /// Elementwise or structural op of one parameter.
  void unary(std::string name, PPtr x, std::function<Var(Var)> f) {
    add(std::move(name), [x, f](Tape& t) { return project(f(t.param(*x))); }, {x.get()});
  }
  void binary(std::string name, PPtr a, PPtr b, std::function<Var(Var, Var)> f) {
    add(std::move(name), [a, b, f](Tape& t) { return project(f(t.param(*a), t.param(*b))); }, {a.get(), b.get()});
  }

  std::vector<GradCheckCase> take() { return std::move(cases_); }

 private:
  Rng rng_;
  std::vector<GradCheckCase> cases_;
};

std::vector<Parameter*> join(std::vector<Parameter*> a, const std::vector<Parameter*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

void primitive_cases(Builder& b) {
  b.binary("add", b.uniform({3, 4}), b.uniform({4}), [](Var x, Var y) { return ad::add(x, y); });
  b.binary("sub", b.uniform({3, 1}), b.uniform({3, 4}), [](Var x, Var y) { return ad::sub(x, y); });
  b.binary("mul", b.uniform({2, 3}), b.uniform({2, 3}), [](Var x, Var y) { return ad::mul(x, y); });
  b.binary("div", b.uniform({2, 3}), b.uniform({2, 3}, 0.5, 1.5), [](Var x, Var y) { return ad::div(x, y); });
  const Tensor c = b.rng().uniform_tensor({3}, -1.0, 1.0);
  b.unary("add_const", b.uniform({2, 3}), [c](Var x) { return ad::add(x, c); });
  b.unary("mul_const", b.uniform({2, 3}), [c](Var x) { return ad::mul(x, c); });
  b.unary("scale", b.uniform({4}), [](Var x) { return ad::scale(x, -1.7); });
  b.unary("shift", b.uniform({4}), [](Var x) { return ad::shift(x, 0.3); });
  b.unary("neg", b.uniform({4}), [](Var x) { return ad::neg(x); });
  b.unary("exp", b.uniform({2, 3}), [](Var x) { return ad::exp(x); });
  b.unary("log", b.uniform({2, 3}, 0.5, 2.0), [](Var x) { return ad::log(x); });
  b.unary("abs", b.away_from_zero({2, 3}), [](Var x) { return ad::abs(x); });
  b.unary("sqrt", b.uniform({2, 3}, 0.5, 2.0), [](Var x) { return ad::sqrt(x); });
  b.unary("square", b.uniform({2, 3}), [](Var x) { return ad::square(x); });
  b.unary("pow", b.uniform({2, 3}, 0.5, 2.0), [](Var x) { return ad::pow(x, 2.5); });
  b.unary("relu", b.away_from_zero({2, 3}), [](Var x) { return ad::relu(x); });
  b.unary("leaky_relu", b.away_from_zero({2, 3}), [](Var x) { return ad::leaky_relu(x, 0.1); });
  b.binary("prelu", b.away_from_zero({3, 4}), b.uniform({4}, 0.05, 0.5),
           [](Var x, Var s) { return ad::prelu(x, s); });
  b.unary("sigmoid", b.uniform({2, 3}, -3.0, 3.0), [](Var x) { return ad::sigmoid(x); });
  b.unary("tanh", b.uniform({2, 3}, -2.0, 2.0), [](Var x) { return ad::tanh(x); });
  b.unary("softplus", b.uniform({2, 3}, -3.0, 3.0), [](Var x) { return ad::softplus(x); });
  b.unary("elu", b.away_from_zero({2, 3}), [](Var x) { return ad::elu(x, 0.8); });
  b.unary("gelu", b.uniform({2, 3}, -3.0, 3.0), [](Var x) { return ad::gelu(x); });
  b.unary("silu", b.uniform({2, 3}, -3.0, 3.0), [](Var x) { return ad::silu(x); });
  b.binary("matmul", b.uniform({3, 4}), b.uniform({4, 2}), [](Var x, Var y) { return ad::matmul(x, y); });
  b.binary("batched_matmul", b.uniform({2, 3, 4}), b.uniform({2, 4, 2}),
           [](Var x, Var y) { return ad::batched_matmul(x, y); });
  b.unary("sum", b.uniform({2, 3, 4}), [](Var x) { return ad::sum(x, {1}, true); });
  b.unary("mean", b.uniform({2, 3, 4}), [](Var x) { return ad::mean(x, {0, 2}); });
  b.unary("max", b.distinct({3, 4}), [](Var x) { return ad::max(x, {1}); });
  b.unary("softmax", b.uniform({3, 4}, -2.0, 2.0), [](Var x) { return ad::softmax(x, 0.7); });
  b.unary("logsumexp", b.uniform({3, 4}, -2.0, 2.0), [](Var x) { return ad::logsumexp(x); });
  b.unary("reshape", b.uniform({2, 6}), [](Var x) { return ad::reshape(x, {3, 4}); });
  b.unary("transpose", b.uniform({2, 3, 4}), [](Var x) { return ad::transpose(x, {2, 0, 1}); });
  b.binary("concat", b.uniform({2, 3}), b.uniform({2, 2}),
           [](Var x, Var y) { return ad::concat({x, y}, 1); });
  b.unary("slice", b.uniform({3, 5}), [](Var x) { return ad::slice(x, 1, 1, 4); });
  b.unary("gather_rows", b.uniform({3, 2}), [](Var x) { return ad::gather_rows(x, {2, 0, 2, 1}); });
  b.unary("scatter_rows.sum", b.uniform({4, 2}),
          [](Var x) { return ad::scatter_rows(x, {0, 1, 0, 2}, 3, ad::Scatter::kSum); });
  b.unary("scatter_rows.mean", b.uniform({4, 2}),
          [](Var x) { return ad::scatter_rows(x, {0, 1, 0, 2}, 3, ad::Scatter::kMean); });
  b.unary("scatter_rows.max", b.distinct({4, 2}),
          [](Var x) { return ad::scatter_rows(x, {0, 1, 0, 2}, 3, ad::Scatter::kMax); });
  b.unary("segment_softmax", b.uniform({6}, -2.0, 2.0),
          [](Var x) { return ad::segment_softmax(x, {0, 0, 1, 1, 1, 2}, 3); });

  {
    conv::ConvSpec s1{.rank = 1, .half_width = 1, .in_channels = 2, .out_channels = 3, .dilation = 2, .causal = true};
    auto x = b.uniform({2, 7, 2}), w = b.uniform(s1.weight_shape()), bias = b.uniform({3});
    b.add("conv1d", [x, w, bias, s1](Tape& t) { return project(conv::conv1d(t.param(*x), t.param(*w), t.param(*bias), s1)); },
          {x.get(), w.get(), bias.get()});
  }
  {
    conv::ConvSpec s2{.rank = 2, .half_width = 1, .in_channels = 2, .out_channels = 2, .stride = 2};
    auto x = b.uniform({1, 5, 5, 2}), w = b.uniform(s2.weight_shape()), bias = b.uniform({2});
    b.add("conv2d", [x, w, bias, s2](Tape& t) { return project(conv::conv2d(t.param(*x), t.param(*w), t.param(*bias), s2)); },
          {x.get(), w.get(), bias.get()});
  }
  b.unary("max_pool2d", b.distinct({1, 4, 5, 2}), [](Var x) { return conv::max_pool2d(x, 2); });
  b.binary("diag_scan", b.uniform({3}, -0.9, 0.9), b.uniform({6, 3}),
           [](Var l, Var u) { return rnn::diag_scan(l, u); });
}

void layer_cases(Builder& b) {
  auto& rng = b.rng();
  {
    auto x = b.uniform({4, 3});
    auto layer = std::make_shared<nn::Linear>(3, 2, rng, nn::Activation::kTanh);
    b.add("layer.linear", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({5, 3});
    auto mlp = std::make_shared<nn::MLP>(std::vector<Index>{3, 6, 2}, rng, nn::Activation::kSoftplus);
    b.add("layer.mlp", [x, mlp](Tape& t) { return project((*mlp)(t.param(*x))); }, join({x.get()}, mlp->parameters()));
  }
  {
    auto x = b.away_from_zero({3, 4});
    auto layer = std::make_shared<nn::PReLU>(4, 0.2);
    b.add("layer.prelu", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({3, 4});
    auto layer = std::make_shared<nn::GLU>(4, 3, rng);
    b.add("layer.glu", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({6, 3});
    auto layer = std::make_shared<nn::BatchNorm>(3);
    layer->alpha().value() = rng.uniform_tensor({3}, 0.5, 1.5);
    layer->beta().value() = rng.uniform_tensor({3}, -0.5, 0.5);
    b.add("layer.batch_norm", [x, layer](Tape& t) { return project((*layer)(t.param(*x), true)); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({3, 5});
    auto layer = std::make_shared<nn::LayerNorm>(Shape{5});
    layer->alpha().value() = rng.uniform_tensor({5}, 0.5, 1.5);
    b.add("layer.layer_norm", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({3, 4});
    auto layer = std::make_shared<nn::RMSNorm>(4);
    layer->alpha().value() = rng.uniform_tensor({4}, 0.5, 1.5);
    b.add("layer.rms_norm", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto layer = std::make_shared<nn::Embedding>(5, 3, rng);
    b.add("layer.embedding", [layer](Tape& t) { return project((*layer)(t, {4, 0, 4, 2})); }, layer->parameters());
  }
  {
    auto x = b.uniform({2, 8, 2});
    auto layer = std::make_shared<conv::Conv>(
        conv::ConvSpec{.rank = 1, .half_width = 1, .in_channels = 2, .out_channels = 4, .dilation = 2, .causal = true, .groups = 2},
        rng);
    b.add("layer.conv1d_causal_grouped", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({2, 5, 4, 2});
    auto layer = std::make_shared<conv::Conv>(
        conv::ConvSpec{.rank = 2, .half_width = 1, .in_channels = 2, .out_channels = 3, .stride = 2,
                       .padding = conv::Padding::kCircular},
        rng);
    b.add("layer.conv2d_circular_strided", [x, layer](Tape& t) { return project((*layer)(t.param(*x))); },
          join({x.get()}, layer->parameters()));
  }
  {
    auto x = b.uniform({4, 6});
    auto mha = std::make_shared<attn::MultiHeadAttention>(6, 2, 3, 3, 5, rng);
    b.add("layer.multi_head_attention_causal",
          [x, mha](Tape& t) { return project((*mha)(t.param(*x), {.causal = true})); },
          join({x.get()}, mha->parameters()));
  }
  {
    auto x = b.uniform({4, 4}), z = b.uniform({3, 4});
    auto mha = std::make_shared<attn::MultiHeadAttention>(4, 2, 2, 3, 4, rng);
    b.add("layer.cross_attention", [x, z, mha](Tape& t) { return project(mha->cross(t.param(*x), t.param(*z))); },
          join({x.get(), z.get()}, mha->parameters()));
  }
  {
    auto x = b.uniform({5, 4});
    auto mha = std::make_shared<attn::MultiHeadAttention>(4, 2, 2, 2, 4, rng);
    auto alibi = std::make_shared<attn::LinearBias>(2);
    alibi->slopes().value() = Tensor::vector({0.3, 0.7});
    b.add("layer.linear_bias",
          [x, mha, alibi](Tape& t) { return project((*mha)(t.param(*x), {.causal = true, .linear_bias = alibi.get()})); },
          join(join({x.get()}, mha->parameters()), alibi->parameters()));
  }
  for (auto norm : {attn::Norm::kPre, attn::Norm::kPost}) {
    auto x = b.uniform({3, 4});
    auto block = std::make_shared<attn::TransformerBlock>(4, 2, rng, norm, 2);
    b.add(norm == attn::Norm::kPre ? "layer.transformer_pre_norm" : "layer.transformer_post_norm",
          [x, block](Tape& t) { return project((*block)(t.param(*x))); }, join({x.get()}, block->parameters()));
  }
  for (auto phi : {attn::FeatureMap::kEluPlusOne, attn::FeatureMap::kQuadratic}) {
    auto q = b.uniform({5, 2}), k = b.uniform({5, 2}), v = b.uniform({5, 3});
    b.add(phi == attn::FeatureMap::kEluPlusOne ? "layer.linear_attention_elu" : "layer.linear_attention_quadratic",
          [q, k, v, phi](Tape& t) {
            return project(attn::linear_attention(t.param(*q), t.param(*k), t.param(*v), phi, true));
          },
          {q.get(), k.get(), v.get()});
  }

  auto ring = std::make_shared<graph::SparseGraph>(5, std::vector<std::pair<Index, Index>>{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 2}});
  {
    auto x = b.uniform({5, 3});
    auto gc = std::make_shared<graph::GraphConv>(3, 2, rng, nn::Activation::kTanh);
    b.add("layer.graph_conv", [x, gc, ring](Tape& t) { return project((*gc)(*ring, t.param(*x))); },
          join({x.get()}, gc->parameters()));
  }
  {
    auto x = b.uniform({5, 3});
    auto gat = std::make_shared<graph::GraphAttention>(3, 2, rng, graph::GatVariant::kV1);
    b.add("layer.gat_v1", [x, gat, ring](Tape& t) { return project((*gat)(*ring, t.param(*x))); },
          join({x.get()}, gat->parameters()));
  }
  {
    auto g = std::make_shared<graph::SparseGraph>(*ring);
    g->edge_features = rng.uniform_tensor({g->edge_count(), 2}, -1.0, 1.0);
    auto x = b.uniform({5, 3});
    auto gat = std::make_shared<graph::GraphAttention>(3, 2, rng, graph::GatVariant::kV2, 4, nn::Activation::kIdentity, 2);
    b.add("layer.gat_v2_edge_features", [x, gat, g](Tape& t) { return project((*gat)(*g, t.param(*x))); },
          join({x.get()}, gat->parameters()));
  }
  {
    auto x = b.uniform({5, 2});
    auto cell = std::make_shared<rnn::ElmanCell>(3, 2, rng);
    auto readout = std::make_shared<rnn::Readout>(2, 3, 2, rng);
    b.add("layer.elman_scan",
          [x, cell, readout](Tape& t) { return project(rnn::rnn_scan(*cell, *readout, t.param(*x)).outputs); },
          join(join({x.get()}, cell->parameters()), readout->parameters()));
  }
  {
    auto x = b.uniform({5, 2});
    auto cell = std::make_shared<rnn::LiGRUCell>(3, 2, rng);
    auto readout = std::make_shared<rnn::Readout>(2, 3, 2, rng);
    b.add("layer.ligru_scan_reverse",
          [x, cell, readout](Tape& t) { return project(rnn::rnn_scan(*cell, *readout, t.param(*x), true).outputs); },
          join(join({x.get()}, cell->parameters()), readout->parameters()));
  }
  {
    auto x = b.uniform({6, 2});
    auto ssm = std::make_shared<rnn::DiagSSM>(3, 2, 2, rng);
    b.add("layer.diag_ssm", [x, ssm](Tape& t) { return project((*ssm)(t.param(*x))); },
          join({x.get()}, ssm->parameters()));
  }
  {
    auto spred = std::make_shared<optim::SpredWeight>("w", rng.uniform_tensor({3, 2}, -1.0, 1.0));
    auto x = b.uniform({4, 3});
    b.add("layer.spred",
          [spred, x](Tape& t) {
            return ad::add(project(ad::matmul(t.param(*x), spred->weight(t))), spred->penalty(t));
          },
          join({x.get()}, spred->parameters()));
  }

  // Losses are composites of registered primitives; checked at their own inputs.
  {
    auto z = b.uniform({4, 3}, -2.0, 2.0);
    const Tensor y = Tensor::vector({2, 0, 1, 2});
    b.add("loss.cross_entropy", [z, y](Tape& t) { return optim::cross_entropy(t.param(*z), y); }, {z.get()});
  }
  {
    auto p = b.uniform({6});
    Tensor y(Shape{6});
    for (Index i = 0; i < 6; ++i) y[i] = p->value()[i] + (i % 2 ? 1.6 : -0.4);  // both Huber branches
    b.add("loss.huber", [p, y](Tape& t) { return optim::huber(t.param(*p), y); }, {p.get()});
  }
  {
    auto z = b.uniform({5}, -2.0, 2.0);
    const Tensor y = Tensor::vector({1, 0, 0, 1, 1});
    b.add("loss.binary_cross_entropy", [z, y](Tape& t) { return optim::binary_cross_entropy(t.param(*z), y); },
          {z.get()});
  }
}

void collect_primitives(const Tape& tape, std::set<std::string>& into) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& node = tape.node(static_cast<ad::NodeId>(i));
    if (node.primitive) into.emplace(node.primitive->name());
  }
}

}  // namespace

std::vector<GradCheckCase> gradcheck_catalogue(std::uint64_t seed) {
  Builder b(seed);
  primitive_cases(b);
  layer_cases(b);
  return b.take();
}

Index SuiteReport::failures() const {
  return static_cast<Index>(std::count_if(checks.begin(), checks.end(), [](const auto& c) { return !c.pass; }));
}

nlohmann::json SuiteReport::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  double worst = 0.0;
  for (const auto& c : checks) {
    auto item = c.to_json();
    item["primitive"] = c.name;
    items.push_back(item);
    worst = std::max(worst, c.max_rel_err);
  }
  return {{"pass", pass},
          {"checks", items},
          {"failures", failures()},
          {"max_rel_err", worst},
          {"covered_primitives", covered},
          {"uncovered_primitives", uncovered}};
}

SuiteReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases, const ad::GradCheckOptions& options) {
  SuiteReport report;
  for (const auto& c : cases) {
    std::set<std::string>& covered = report.covered;
    const ad::LossFn& inner = c.loss;
    ad::LossFn recording = [&inner, &covered](Tape& tape) {
      Var out = inner(tape);
      collect_primitives(tape, covered);
      return out;
    };
    report.checks.push_back(ad::grad_check(recording, c.params, options, c.name));
  }
  for (const auto& name : ad::Registry::global().names())
    if (!report.covered.contains(name)) report.uncovered.push_back(name);
  report.pass = report.failures() == 0 && report.uncovered.empty() && !report.checks.empty();
  return report;
}

}  // namespace difflab::harness
