#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "difflab/autodiff/tape.hpp"
#include "difflab/nn/activation.hpp"
#include "difflab/random.hpp"

// Recurrent cells, linear state-space models and associative scans. States and
// inputs are rows: a length-t sequence is a (t, width) matrix, while the
// transition matrices keep the column-vector orientation s' = A s + B x.
namespace difflab::rnn {

class Cell {
 public:
  virtual ~Cell() = default;
  virtual Index state_width() const = 0;
  virtual Index input_width() const = 0;
  /// One transition on row batches: s (b,e), x (b,c) -> (b,e).
  virtual ad::Var step(ad::Var s, ad::Var x) const = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
};

/// s' = phi(A s + B x)
class ElmanCell final : public Cell {
 public:
  ElmanCell(Index state, Index input, Rng& rng, nn::Activation phi = nn::Activation::kTanh);
  ElmanCell(ad::Parameter a, ad::Parameter b, nn::Activation phi);
  Index state_width() const override { return a_.value().dim(0); }
  Index input_width() const override { return b_.value().dim(1); }
  ad::Var step(ad::Var s, ad::Var x) const override;
  std::vector<ad::Parameter*> parameters() override { return {&a_, &b_}; }
  ad::Parameter& a() { return a_; }
  ad::Parameter& b() { return b_; }

 private:
  ad::Parameter a_, b_;
  nn::Activation phi_;
};

/// gamma = sigma(V s + U x + b_gate); s' = gamma * phi(A s + B x) + (1 - gamma) * s
class LiGRUCell final : public Cell {
 public:
  LiGRUCell(Index state, Index input, Rng& rng, nn::Activation phi = nn::Activation::kTanh);
  Index state_width() const override { return a_.value().dim(0); }
  Index input_width() const override { return b_.value().dim(1); }
  ad::Var step(ad::Var s, ad::Var x) const override;
  ad::Var gate(ad::Var s, ad::Var x) const;
  std::vector<ad::Parameter*> parameters() override { return {&a_, &b_, &v_, &u_, &gate_bias_}; }
  ad::Parameter& a() { return a_; }
  ad::Parameter& b() { return b_; }
  ad::Parameter& v() { return v_; }
  ad::Parameter& u() { return u_; }
  ad::Parameter& gate_bias() { return gate_bias_; }

 private:
  ad::Parameter a_, b_, v_, u_, gate_bias_;
  nn::Activation phi_;
};

/// y = C s + D x
struct Readout {
  ad::Parameter c;  // (o, e)
  ad::Parameter d;  // (o, c)
  Readout(Index out, Index state, Index input, Rng& rng);
  ad::Var operator()(ad::Var states, ad::Var inputs) const;
  std::vector<ad::Parameter*> parameters() { return {&c, &d}; }
};

struct ScanOutput {
  ad::Var states;   // (t, e), or (t, 2e) when bidirectional
  ad::Var outputs;  // (t, o), or (t, 2o) when bidirectional
};

/// Left-to-right evaluation from s_0 = 0 (right-to-left when reverse is set;
/// rows stay aligned with input positions).
ScanOutput rnn_scan(const Cell& cell, const Readout& readout, ad::Var inputs, bool reverse = false);
ScanOutput bidirectional_scan(const Cell& forward, const Readout& forward_readout, const Cell& backward,
                              const Readout& backward_readout, ad::Var inputs);

// ---------------------------------------------------------------------------
// Linear state-space models (plain tensors)

struct LinearSSM {
  Eigen::MatrixXd a;  // (e, e)
  Eigen::MatrixXd b;  // (e, c)
  Eigen::MatrixXd c;  // (o, e)
  Eigen::MatrixXd d;  // (o, c)
};

/// Spectral radius of A.
double spectral_radius(const Eigen::MatrixXd& a);
/// States (t,e) by the recurrence s_i = A s_{i-1} + B x_i, s_0 = 0. With
/// check_stability, a spectral radius >= 1 raises DomainError.
Tensor ssm_states_sequential(const Tensor& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             bool check_stability = false);
/// Outputs (t,o).
Tensor linear_ssm_sequential(const Tensor& x, const LinearSSM& ssm, bool check_stability = false);

/// Element of the scan monoid (Z, z) * (V, v) = (V Z, V z + v); the left
/// operand is the earlier one.
struct DenseElement {
  Eigen::MatrixXd m;
  Eigen::VectorXd v;
};
struct DiagElement {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
};
DenseElement combine(const DenseElement& earlier, const DenseElement& later);
DiagElement combine(const DiagElement& earlier, const DiagElement& later);

struct ScanStats {
  Index combines = 0;
  Index depth = 0;  // longest chain of dependent combines
};

namespace detail {

template <typename T, typename Op>
std::vector<T> scan_levels(const std::vector<T>& xs, const std::vector<Index>& levels, Op& op,
                           std::vector<Index>& out_levels, Index& combines) {
  const std::size_t n = xs.size();
  if (n <= 1) {
    out_levels = levels;
    return xs;
  }
  std::vector<T> pairs;
  std::vector<Index> pair_levels;
  pairs.reserve(n / 2);
  for (std::size_t i = 0; i + 1 < n; i += 2) {
    pairs.push_back(op(xs[i], xs[i + 1]));
    pair_levels.push_back(std::max(levels[i], levels[i + 1]) + 1);
    ++combines;
  }
  std::vector<Index> prefix_levels;
  const std::vector<T> prefixes = scan_levels(pairs, pair_levels, op, prefix_levels, combines);
  std::vector<T> out;
  out.reserve(n);
  out_levels.assign(n, 0);
  out.push_back(xs[0]);
  out_levels[0] = levels[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (i % 2 == 1) {
      out.push_back(prefixes[(i - 1) / 2]);
      out_levels[i] = prefix_levels[(i - 1) / 2];
    } else {
      out.push_back(op(prefixes[i / 2 - 1], xs[i]));
      out_levels[i] = std::max(prefix_levels[i / 2 - 1], levels[i]) + 1;
      ++combines;
    }
  }
  return out;
}

}  // namespace detail

/// Inclusive scan on a balanced binary tree: adjacent pairs are combined,
/// the half-length sequence is scanned recursively, and the remaining even
/// positions are filled in on the way back. Fewer than 2t combines.
template <typename T, typename Op>
std::vector<T> associative_scan(const std::vector<T>& xs, Op&& op, ScanStats* stats = nullptr) {
  std::vector<Index> levels(xs.size(), 0), out_levels;
  Index combines = 0;
  std::vector<T> out = detail::scan_levels(xs, levels, op, out_levels, combines);
  if (stats) {
    stats->combines = combines;
    stats->depth = out_levels.empty() ? 0 : *std::max_element(out_levels.begin(), out_levels.end());
  }
  return out;
}

/// States (t,e) for a dense transition via the parallel scan.
Tensor ssm_parallel_scan(const Tensor& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         ScanStats* stats = nullptr);
/// States (t,e) for a diagonal transition given as a vector.
Tensor ssm_parallel_scan_diag(const Tensor& x, const Eigen::VectorXd& lambda, const Eigen::MatrixXd& b,
                              ScanStats* stats = nullptr);

/// K = stack(A^{t-1} B, ..., A B, B), shape (t, e, c).
Tensor ssm_to_conv_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Index t);
/// Causal convolution of x (t,c) with a kernel (t_k, e, c) built as above:
/// s_i = sum_j K[t_k - 1 - (i - j)] x_j. Returns (t, e).
Tensor ssm_conv_states(const Tensor& x, const Tensor& kernel);

// ---------------------------------------------------------------------------
// Differentiable diagonal SSM

/// s_i = lambda * s_{i-1} + u_i with s_0 = 0: lambda (e), u (t,e) -> (t,e).
ad::Var diag_scan(ad::Var lambda, ad::Var u);

/// lambda = tanh(lambda_raw); s_i = lambda * s_{i-1} + B x_i; y_i = C s_i + D x_i.
struct DiagSSM {
  ad::Parameter lambda_raw;  // (e)
  ad::Parameter b;           // (e, c)
  ad::Parameter c;           // (o, e)
  ad::Parameter d;           // (o, c)

  DiagSSM(Index state, Index input, Index out, Rng& rng);
  ad::Var states(ad::Var x) const;
  ad::Var operator()(ad::Var x) const;
  Tensor lambda() const;
  std::vector<ad::Parameter*> parameters() { return {&lambda_raw, &b, &c, &d}; }
};

std::vector<std::string> primitive_names();

}  // namespace difflab::rnn
