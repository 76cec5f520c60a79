#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/autodiff/tape.hpp"
#include "difflab/conv/conv.hpp"
#include "difflab/nn/layers.hpp"
#include "difflab/random.hpp"

namespace difflab::harness {

/// Printable ASCII (space through '~') as ids 0..94, then BOS and OOV.
class CharTokenizer {
 public:
  static constexpr Index kPrintable = 95;
  static constexpr Index kBos = 95;
  static constexpr Index kOov = 96;
  static constexpr Index kVocabulary = 97;

  Index vocabulary() const { return kVocabulary; }
  /// Characters outside printable ASCII map to OOV.
  std::vector<Index> encode(std::string_view text) const;
  /// BOS is dropped and OOV renders as U+FFFD.
  std::string decode(const std::vector<Index>& ids) const;
  Index id(char c) const;
};

/// Log-probabilities (or logits) over the vocabulary for the next token.
using NextTokenFn = std::function<Tensor(const std::vector<Index>& prefix)>;

/// Appends max_len tokens to the prompt by taking the argmax each step.
std::vector<Index> greedy_decode(const NextTokenFn& model, std::vector<Index> prompt, Index max_len);
/// Ancestral sampling from softmax(logits / temperature).
std::vector<Index> sample_decode(const NextTokenFn& model, std::vector<Index> prompt, Index max_len,
                                 double temperature, Rng& rng);

struct Hypothesis {
  std::vector<Index> tokens;
  double log_prob = 0.0;
};
/// Keeps the k best continuations by cumulative log-probability for exactly
/// max_len steps. Returned hypotheses are sorted best first.
std::vector<Hypothesis> beam_search(const NextTokenFn& model, const std::vector<Index>& prompt, Index max_len,
                                    Index beam);

/// Character language model: embedding, a stack of causal dilated 1D
/// convolutions with residual connections, and a linear read-out.
class CharConvLM {
 public:
  struct Options {
    Index embed = 32;
    std::vector<Index> dilations{1, 2, 4, 8};
    Index half_width = 1;
  };
  CharConvLM(Index vocabulary, const Options& options, Rng& rng);

  /// (t) ids -> (t, V) next-token logits; row i only sees ids[0..i].
  ad::Var logits(ad::Tape& tape, const std::vector<Index>& ids) const;
  /// Log-probabilities of the token following `prefix`.
  Tensor next_log_probs(const std::vector<Index>& prefix) const;
  Index receptive_field() const;
  std::vector<ad::Parameter*> parameters();
  nlohmann::json spec() const;

 private:
  Options options_;
  nn::Embedding embedding_;
  std::vector<conv::Conv> layers_;
  nn::Linear readout_;
};

}  // namespace difflab::harness
