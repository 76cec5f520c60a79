#include "difflab/attention/attention.hpp"

#include <cmath>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"
#include "difflab/kernels.hpp"

namespace difflab::attn {

Tensor causal_mask(Index n, Index m, Index offset) {
  Tensor mask({n, m});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j)
      if (j > offset + i) mask(i, j) = kMaskValue;
  return mask;
}

Var apply_causal_mask(Var scores) {
  const Shape& s = scores.shape();
  if (s.size() != 2 || s[0] != s[1]) throw DimensionError("causal mask needs square scores, got " + to_string(s));
  return ad::add(scores, causal_mask(s[0], s[1]));
}

Var scaled_scores(Var q, Var k) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || q.dim(1) != k.dim(1))
    throw DimensionError("attention: query " + to_string(q.shape()) + " and key " + to_string(k.shape()) +
                         " widths differ");
  return ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
}

// ---------------------------------------------------------------------------

LinearBias::LinearBias(Index heads) {
  if (heads < 1) throw DimensionError("linear bias needs at least one head");
  Tensor w({heads});
  for (Index h = 0; h < heads; ++h) w[h] = std::pow(2.0, -8.0 * static_cast<double>(h + 1) / static_cast<double>(heads));
  slopes_ = Parameter("alibi_slopes", w);
}

Tensor LinearBias::offsets(Index n, Index m, Index offset) {
  Tensor out({n, m});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) out(i, j) = -static_cast<double>(offset + i - j);
  return out;
}

Var LinearBias::bias(Tape& tape, Index head, Index n, Index m, Index offset) const {
  if (head < 0 || head >= slopes_.value().size()) throw DimensionError("linear bias: head index out of range");
  Var w = ad::slice(tape.param(slopes_), 0, head, head + 1);
  return ad::mul(tape.constant(offsets(n, m, offset)), w);
}

Var attend(Var q, Var k, Var v, const AttendOptions& options, Index head) {
  if (v.value().rank() != 2 || v.dim(0) != k.dim(0))
    throw DimensionError("attention: " + std::to_string(k.dim(0)) + " keys but value shape " + to_string(v.shape()));
  Var scores = scaled_scores(q, k);
  const Index n = q.dim(0), m = k.dim(0);
  if (options.causal) {
    if (n != m) throw DimensionError("causal attention needs as many queries as keys");
    scores = apply_causal_mask(scores);
  }
  if (options.linear_bias) scores = ad::add(scores, options.linear_bias->bias(q.tape(), head, n, m));
  Var weights = ad::softmax(scores);
  if (options.attention_keep < 1.0) {
    if (!options.rng) throw ContractError("attention dropout needs a random generator");
    weights = nn::Dropout(options.attention_keep)(weights, *options.rng, true);
  }
  return ad::matmul(weights, v);
}

// ---------------------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(Index embed, Index heads, Index key, Index value, Index out, Rng& rng)
    : embed_(embed) {
  if (embed < 1 || heads < 1 || key < 1 || value < 1 || out < 1)
    throw DimensionError("multi-head attention widths and head count must be positive");
  for (Index h = 0; h < heads; ++h) {
    const std::string tag = "head" + std::to_string(h) + ".";
    wq_.emplace_back(tag + "wq", nn::fan_in_uniform({embed, key}, embed, rng));
    wk_.emplace_back(tag + "wk", nn::fan_in_uniform({embed, key}, embed, rng));
    wv_.emplace_back(tag + "wv", nn::fan_in_uniform({embed, value}, embed, rng));
  }
  wo_ = Parameter("wo", nn::fan_in_uniform({heads * value, out}, heads * value, rng));
}

Var MultiHeadAttention::operator()(Var x, const AttendOptions& options) const { return cross(x, x, options); }

Var MultiHeadAttention::cross(Var x, Var z, const AttendOptions& options) const {
  for (const Var* t : {&x, &z})
    if (t->value().rank() != 2 || t->dim(1) != embed_)
      throw DimensionError("attention expects (n, " + std::to_string(embed_) + ") tokens, got " + to_string(t->shape()));
  Tape& tape = x.tape();
  std::vector<Var> heads;
  for (Index h = 0; h < this->heads(); ++h) {
    const auto i = static_cast<std::size_t>(h);
    Var q = ad::matmul(x, tape.param(wq_[i]));
    Var k = ad::matmul(z, tape.param(wk_[i]));
    Var v = ad::matmul(z, tape.param(wv_[i]));
    heads.push_back(attend(q, k, v, options, h));
  }
  Var joined = heads.size() == 1 ? heads.front() : ad::concat(heads, 1);
  return ad::matmul(joined, tape.param(wo_));
}

std::vector<Parameter*> MultiHeadAttention::parameters() {
  std::vector<Parameter*> ps;
  for (std::size_t h = 0; h < wq_.size(); ++h) {
    ps.push_back(&wq_[h]);
    ps.push_back(&wk_[h]);
    ps.push_back(&wv_[h]);
  }
  ps.push_back(&wo_);
  return ps;
}

Index MultiHeadAttention::parameter_count() const {
  Index total = wo_.value().size();
  for (std::size_t h = 0; h < wq_.size(); ++h) total += wq_[h].value().size() + wk_[h].value().size() + wv_[h].value().size();
  return total;
}

// ---------------------------------------------------------------------------

Tensor sinusoidal_embedding(Index n, Index e) {
  if (e < 2 || e % 2 != 0) throw DimensionError("sinusoidal embedding needs an even width, got " + std::to_string(e));
  Tensor out({n, e});
  for (Index j = 0; j < e / 2; ++j) {
    const double omega = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(e));
    for (Index i = 0; i < n; ++i) {
      out(i, 2 * j) = std::sin(omega * static_cast<double>(i));
      out(i, 2 * j + 1) = std::cos(omega * static_cast<double>(i));
    }
  }
  return out;
}

LearnedPositions::LearnedPositions(Index max_length, Index embed, Rng& rng)
    : table_("positions", rng.normal_tensor({max_length, embed}, 0.0, 0.02)) {
  if (max_length < 1 || embed < 1) throw DimensionError("learned positions need positive extents");
}

Var LearnedPositions::rows(Tape& tape, Index n) const {
  const Index m = table_.value().dim(0);
  if (n < 0 || n > m)
    throw DimensionError("sequence of length " + std::to_string(n) + " exceeds " + std::to_string(m) +
                         " learned positions");
  return ad::slice(tape.param(table_), 0, 0, n);
}

// ---------------------------------------------------------------------------

TransformerBlock::TransformerBlock(Index embed, Index heads, Rng& rng, Norm norm, Index hidden_factor,
                                   nn::Activation phi)
    : norm_(norm),
      mha_([&] {
        if (heads < 1 || embed % heads != 0)
          throw DimensionError("embedding width " + std::to_string(embed) + " is not divisible by " +
                               std::to_string(heads) + " heads");
        return MultiHeadAttention(embed, heads, embed / heads, embed / heads, embed, rng);
      }()),
      ln1_({embed}),
      ln2_({embed}),
      w1_(embed, hidden_factor * embed, rng, phi, false),
      w2_(hidden_factor * embed, embed, rng, nn::Activation::kIdentity, false) {
  ln1_.alpha().set_name("ln1.alpha");
  ln1_.beta().set_name("ln1.beta");
  ln2_.alpha().set_name("ln2.alpha");
  ln2_.beta().set_name("ln2.beta");
  w1_.weight().set_name("mlp.w1");
  w2_.weight().set_name("mlp.w2");
}

Var TransformerBlock::operator()(Var x, const AttendOptions& options) const {
  auto mlp = [&](Var t) { return w2_(w1_(t)); };
  if (norm_ == Norm::kPre) {
    Var h = ad::add(x, mha_(ln1_(x), options));
    return ad::add(h, mlp(ln2_(h)));
  }
  Var h = ln1_(ad::add(x, mha_(x, options)));
  return ln2_(ad::add(h, mlp(h)));
}

std::vector<Parameter*> TransformerBlock::parameters() {
  std::vector<Parameter*> ps = mha_.parameters();
  for (auto* p : ln1_.parameters()) ps.push_back(p);
  for (auto* p : ln2_.parameters()) ps.push_back(p);
  ps.push_back(&w1_.weight());
  ps.push_back(&w2_.weight());
  return ps;
}

Var attach_tokens(Var x, Var class_token, std::optional<Var> registers) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 3) throw DimensionError("attach_tokens: tokens must be (n,e) or (b,n,e)");
  const Index e = s.back();
  if (class_token.value().size() != e)
    throw DimensionError("class token of size " + std::to_string(class_token.value().size()) + " for width " +
                         std::to_string(e));
  if (registers && (registers->value().rank() != 2 || registers->dim(1) != e))
    throw DimensionError("registers must be (r, " + std::to_string(e) + ")");
  Tape& tape = x.tape();
  std::vector<Var> extra;
  if (registers && registers->dim(0) > 0) extra.push_back(*registers);
  extra.push_back(ad::reshape(class_token, {1, e}));
  Var tail = extra.size() == 1 ? extra.front() : ad::concat(extra, 0);
  if (s.size() == 2) return ad::concat({x, tail}, 0);
  const Index b = s[0];
  Var tiled = ad::add(tape.constant(Tensor({b, tail.dim(0), e})), ad::reshape(tail, {1, tail.dim(0), e}));
  return ad::concat({x, tiled}, 1);
}

Var class_token_row(Var h) {
  const Shape& s = h.shape();
  if (s.size() == 2) return ad::slice(h, 0, s[0] - 1, s[0]);
  if (s.size() == 3) return ad::reshape(ad::slice(h, 1, s[1] - 1, s[1]), {s[0], s[2]});
  throw DimensionError("class_token_row: expected (n,e) or (b,n,e)");
}

// ---------------------------------------------------------------------------

Tensor chunked_attention(const Tensor& q, const Tensor& keys, const Tensor& values, const std::vector<Index>& chunks) {
  if (q.rank() != 1 || keys.rank() != 2 || values.rank() != 2 || keys.dim(1) != q.dim(0) ||
      values.dim(0) != keys.dim(0))
    throw DimensionError("chunked_attention: inconsistent query/key/value shapes");
  Index total = 0;
  for (Index c : chunks) {
    if (c < 1) throw ContractError("chunked_attention: empty chunk");
    total += c;
  }
  if (total != keys.dim(0)) throw ContractError("chunked_attention: chunk sizes do not cover the keys");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(0)));
  const Index vw = values.dim(1);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(vw);
  double normalizer = 0.0;
  double running_max = -std::numeric_limits<double>::infinity();
  const auto qv = Eigen::Map<const Eigen::VectorXd>(q.data(), q.size());
  Index start = 0;
  for (Index c : chunks) {
    const auto kb = keys.rows_view().middleRows(start, c);
    const auto vb = values.rows_view().middleRows(start, c);
    const Eigen::VectorXd s = (kb * qv) * scale;
    const double chunk_max = s.maxCoeff();
    const double new_max = std::max(running_max, chunk_max);
    const double rescale = std::isinf(running_max) ? 0.0 : std::exp(running_max - new_max);
    const Eigen::VectorXd w = (s.array() - new_max).exp().matrix();
    h = h * rescale + vb.transpose() * w;
    normalizer = normalizer * rescale + w.sum();
    running_max = new_max;
    start += c;
  }
  Tensor out({vw});
  for (Index i = 0; i < vw; ++i) out[i] = h[i] / normalizer;
  return out;
}

KVCache empty_cache(const MultiHeadAttention& mha) {
  KVCache cache;
  for (Index h = 0; h < mha.heads(); ++h) {
    cache.keys.emplace_back(Shape{0, mha.key_width()});
    cache.values.emplace_back(Shape{0, mha.value_width()});
  }
  return cache;
}

Tensor decode_step(const MultiHeadAttention& mha, KVCache& cache, const Tensor& token, const LinearBias* linear_bias) {
  const Index e = mha.embed();
  if (token.size() != e)
    throw DimensionError("decode_step: token of size " + std::to_string(token.size()) + " for width " +
                         std::to_string(e));
  if (static_cast<Index>(cache.keys.size()) != mha.heads()) throw ContractError("decode_step: cache has wrong head count");
  const Tensor x = token.reshaped({1, e});
  const Index position = cache.length();
  std::vector<Tensor> heads;
  for (Index h = 0; h < mha.heads(); ++h) {
    const auto i = static_cast<std::size_t>(h);
    const Tensor q = matmul(x, mha.wq(h).value());
    cache.keys[i] = concat({cache.keys[i], matmul(x, mha.wk(h).value())}, 0);
    cache.values[i] = concat({cache.values[i], matmul(x, mha.wv(h).value())}, 0);
    Tensor scores = matmul(q, transpose(cache.keys[i])) * (1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    if (linear_bias) scores = scores + LinearBias::offsets(1, position + 1, position) * linear_bias->slope(h);
    heads.push_back(matmul(softmax(scores), cache.values[i]));
  }
  return matmul(concat(heads, 1), mha.wo().value());
}

// ---------------------------------------------------------------------------

Tensor feature_map(const Tensor& x, FeatureMap phi) {
  if (phi == FeatureMap::kEluPlusOne) return map(x, [](double v) { return v > 0 ? v + 1.0 : std::exp(v); });
  if (x.rank() != 2) throw DimensionError("quadratic feature map expects (n, k) rows");
  const Index n = x.dim(0), k = x.dim(1);
  Tensor out({n, k * k});
  for (Index r = 0; r < n; ++r)
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) out(r, a * k + b) = x(r, a) * x(r, b);
  return out;
}

Var feature_map(Var x, FeatureMap phi) {
  if (phi == FeatureMap::kEluPlusOne) return ad::shift(ad::elu(x), 1.0);
  if (x.value().rank() != 2) throw DimensionError("quadratic feature map expects (n, k) rows");
  const Index n = x.dim(0), k = x.dim(1);
  Var outer = ad::mul(ad::reshape(x, {n, k, 1}), ad::reshape(x, {n, 1, k}));
  return ad::reshape(outer, {n, k * k});
}

Tensor linear_attention_recurrent(const Tensor& q, const Tensor& k, const Tensor& v, FeatureMap phi) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.dim(0) != q.dim(0))
    throw DimensionError("linear attention: inconsistent query/key/value shapes");
  const Tensor fq = feature_map(q, phi), fk = feature_map(k, phi);
  const Index n = q.dim(0), f = fq.dim(1), vw = v.dim(1);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(f, vw);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(f);
  Tensor h({n, vw});
  for (Index i = 0; i < n; ++i) {
    const Eigen::VectorXd ki = fk.rows_view().row(i).transpose();
    const Eigen::VectorXd qi = fq.rows_view().row(i).transpose();
    s += ki * v.rows_view().row(i);
    z += ki;
    const double denom = qi.dot(z);
    if (!(std::abs(denom) > 0.0) || !std::isfinite(denom))
      throw NumericError("linear attention: zero normalizer at position " + std::to_string(i));
    h.rows_view().row(i) = (qi.transpose() * s) / denom;
  }
  return h;
}

Var linear_attention(Var q, Var k, Var v, FeatureMap phi, bool causal) {
  if (q.value().rank() != 2 || k.shape() != q.shape() || v.value().rank() != 2 || v.dim(0) != k.dim(0))
    throw DimensionError("linear attention: inconsistent query/key/value shapes");
  Var kernel = ad::matmul(feature_map(q, phi), ad::transpose(feature_map(k, phi)));
  if (causal) {
    const Index n = q.dim(0);
    Tensor lower({n, n});
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j <= i; ++j) lower(i, j) = 1.0;
    kernel = ad::mul(kernel, lower);
  }
  Var denom = ad::sum(kernel, {1}, true);
  for (double d : denom.value().values())
    if (!(std::abs(d) > 0.0) || !std::isfinite(d)) throw NumericError("linear attention: zero normalizer");
  return ad::div(ad::matmul(kernel, v), denom);
}

}  // namespace difflab::attn
