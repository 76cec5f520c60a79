#include "difflab/harness/text.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"

namespace difflab::harness {

Index CharTokenizer::id(char c) const {
  const auto u = static_cast<unsigned char>(c);
  if (u < 32 || u > 126) return kOov;
  return static_cast<Index>(u - 32);
}

std::vector<Index> CharTokenizer::encode(std::string_view text) const {
  std::vector<Index> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id(c));
  return ids;
}

std::string CharTokenizer::decode(const std::vector<Index>& ids) const {
  std::string out;
  for (Index t : ids) {
    if (t == kBos) continue;
    if (t >= 0 && t < kPrintable)
      out.push_back(static_cast<char>(32 + t));
    else if (t == kOov)
      out += "\xEF\xBF\xBD";
    else
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(kVocabulary));
  }
  return out;
}

namespace {

Index argmax(const Tensor& scores) {
  Index best = 0;
  for (Index i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

Tensor log_softmax(const Tensor& logits) {
  const double m = logits.array().maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  Tensor out = logits;
  out.array() -= lse;
  return out;
}

void check_scores(const Tensor& scores) {
  if (scores.rank() != 1 || scores.size() == 0) throw DimensionError("next-token scores must be a non-empty vector");
}

}  // namespace

std::vector<Index> greedy_decode(const NextTokenFn& model, std::vector<Index> prompt, Index max_len) {
  for (Index step = 0; step < max_len; ++step) {
    const Tensor scores = model(prompt);
    check_scores(scores);
    prompt.push_back(argmax(scores));
  }
  return prompt;
}

std::vector<Index> sample_decode(const NextTokenFn& model, std::vector<Index> prompt, Index max_len,
                                 double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw DomainError("sampling temperature must be positive");
  for (Index step = 0; step < max_len; ++step) {
    Tensor scores = model(prompt);
    check_scores(scores);
    scores.array() /= temperature;
    const Tensor logp = log_softmax(scores);
    const double u = rng.uniform();
    double acc = 0.0;
    Index pick = argmax(logp);
    for (Index i = 0; i < logp.size(); ++i) {
      acc += std::exp(logp[i]);
      if (u < acc) {
        pick = i;
        break;
      }
    }
    prompt.push_back(pick);
  }
  return prompt;
}

std::vector<Hypothesis> beam_search(const NextTokenFn& model, const std::vector<Index>& prompt, Index max_len,
                                    Index beam) {
  if (beam < 1) throw DomainError("beam width must be at least 1");
  std::vector<Hypothesis> beams{{prompt, 0.0}};
  for (Index step = 0; step < max_len; ++step) {
    std::vector<Hypothesis> expanded;
    for (const auto& h : beams) {
      const Tensor scores = model(h.tokens);
      check_scores(scores);
      const Tensor logp = log_softmax(scores);
      for (Index t = 0; t < logp.size(); ++t) {
        Hypothesis next{h.tokens, h.log_prob + logp[t]};
        next.tokens.push_back(t);
        expanded.push_back(std::move(next));
      }
    }
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(beam), expanded.size());
    std::stable_sort(expanded.begin(), expanded.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
    expanded.resize(keep);
    beams = std::move(expanded);
  }
  return beams;
}

CharConvLM::CharConvLM(Index vocabulary, const Options& options, Rng& rng)
    : options_(options), embedding_(vocabulary, options.embed, rng), readout_(options.embed, vocabulary, rng) {
  for (Index d : options.dilations) {
    conv::ConvSpec spec;
    spec.rank = 1;
    spec.half_width = options.half_width;
    spec.in_channels = options.embed;
    spec.out_channels = options.embed;
    spec.dilation = d;
    spec.causal = true;
    layers_.emplace_back(spec, rng);
    const std::string prefix = "conv" + std::to_string(layers_.size() - 1) + ".";
    layers_.back().weight().set_name(prefix + "weight");
    if (layers_.back().bias()) layers_.back().bias()->set_name(prefix + "bias");
  }
  embedding_.table().set_name("embed.table");
  readout_.weight().set_name("readout.weight");
  if (readout_.bias()) readout_.bias()->set_name("readout.bias");
}

ad::Var CharConvLM::logits(ad::Tape& tape, const std::vector<Index>& ids) const {
  if (ids.empty()) throw DimensionError("char model needs at least one token");
  const auto t = static_cast<Index>(ids.size());
  ad::Var h = ad::reshape(embedding_(tape, ids), {1, t, options_.embed});
  for (const auto& layer : layers_) h = h + ad::relu(layer(h));
  return readout_(ad::reshape(h, {t, options_.embed}));
}

Tensor CharConvLM::next_log_probs(const std::vector<Index>& prefix) const {
  const auto window = static_cast<std::size_t>(receptive_field());
  const std::vector<Index> tail(prefix.size() > window ? prefix.end() - static_cast<std::ptrdiff_t>(window)
                                                       : prefix.begin(),
                                prefix.end());
  ad::Tape tape;
  const Tensor all = logits(tape, tail).value();
  const Index v = all.dim(1);
  Tensor last({v});
  std::copy_n(all.data() + (all.dim(0) - 1) * v, v, last.data());
  return log_softmax(last);
}

Index CharConvLM::receptive_field() const {
  return conv::receptive_field(2 * options_.half_width + 1, options_.dilations);
}

std::vector<ad::Parameter*> CharConvLM::parameters() {
  std::vector<ad::Parameter*> ps = embedding_.parameters();
  for (auto& layer : layers_)
    for (auto* p : layer.parameters()) ps.push_back(p);
  for (auto* p : readout_.parameters()) ps.push_back(p);
  return ps;
}

nlohmann::json CharConvLM::spec() const {
  return {{"kind", "char_conv_lm"},
          {"vocabulary", embedding_.vocabulary()},
          {"embed", options_.embed},
          {"dilations", options_.dilations},
          {"half_width", options_.half_width}};
}

}  // namespace difflab::harness
