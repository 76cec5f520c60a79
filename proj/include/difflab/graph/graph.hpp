#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "difflab/autodiff/ops.hpp"
#include "difflab/autodiff/tape.hpp"
#include "difflab/nn/activation.hpp"
#include "difflab/random.hpp"

// Graphs in coordinate-list form. An entry (i, j) is a non-zero A_ij: node i
// receives from node j, and N(i) = { j : (i, j) is stored }.
namespace difflab::graph {

using ad::Parameter;
using ad::Tape;
using ad::Var;

class SparseGraph {
 public:
  SparseGraph() = default;
  /// Undirected graphs store every pair in both directions; duplicates are dropped.
  SparseGraph(Index nodes, const std::vector<std::pair<Index, Index>>& edges, bool undirected = true,
              std::vector<double> weights = {});

  Index nodes() const { return nodes_; }
  Index edge_count() const { return static_cast<Index>(rows_.size()); }
  const std::vector<Index>& rows() const { return rows_; }
  const std::vector<Index>& cols() const { return cols_; }
  const std::vector<double>& weights() const { return weights_; }
  bool has_edge(Index i, Index j) const;

  /// A + I, skipping nodes that already have a self-loop.
  SparseGraph with_self_loops() const;

  /// Optional node features (n, c), edge features (m, ce) aligned with the
  /// stored entries, and graph membership ids for batched graphs.
  Tensor features;
  std::optional<Tensor> edge_features;
  std::vector<Index> graph_id;
  Index graphs = 1;

 private:
  Index nodes_ = 0;
  std::vector<Index> rows_, cols_;
  std::vector<double> weights_;
};

/// d_i = sum_j A_ij
Tensor degree(const SparseGraph& g);

enum class ShiftKind { kAdjacency, kRowNorm, kColNorm, kSymNorm, kLaplacian };
ShiftKind shift_kind_from_string(const std::string& name);

/// A graph-shift matrix in coordinate form. The Laplacian carries the extra
/// diagonal entries d_i.
struct GraphShift {
  ShiftKind kind = ShiftKind::kAdjacency;
  Index nodes = 0;
  std::vector<Index> rows, cols;
  std::vector<double> values;
};

struct ShiftOptions {
  bool self_loops = false;
  /// Zero-degree nodes pass their own features through instead of raising GraphError.
  bool guard_isolated = false;
};
GraphShift graph_shift(const SparseGraph& g, ShiftKind kind, ShiftOptions options = {});

/// Sparse product S X for X (n, c), differentiable in X.
Var apply_shift(const GraphShift& shift, Var x);
Tensor apply_shift(const GraphShift& shift, const Tensor& x);

/// f^T L f with L = D - A, evaluated as sum over entries A_ij f_i (f_i - f_j).
/// For (n, c) signals the per-column forms are summed.
double laplacian_quadratic(const SparseGraph& g, const Tensor& f);
/// lambda f^T L f, as a differentiable penalty on model outputs f (n) or (n, c).
Var manifold_penalty(const SparseGraph& g, Var f, double lambda);

// ---------------------------------------------------------------------------
// Layers

/// phi(S (X W + b)).
class GraphConv {
 public:
  GraphConv(Index in, Index out, Rng& rng, nn::Activation phi = nn::Activation::kRelu, bool bias = true);
  Var operator()(const GraphShift& shift, Var x) const;
  /// Uses the symmetrically normalized adjacency of g with self-loops added.
  Var operator()(const SparseGraph& g, Var x) const;
  Parameter& weight() { return weight_; }
  std::optional<Parameter>& bias() { return bias_; }
  std::vector<Parameter*> parameters();

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
  nn::Activation phi_;
};

enum class GatVariant { kV1, kV2 };

/// h_i = phi(sum_{j in N(i)} softmax_j(alpha(x_i, x_j)) W^T x_j) with
///   v1: alpha = LeakyReLU(a^T [V x_i || V x_j])
///   v2: alpha = a^T LeakyReLU(V [x_i || x_j || e_ij])
/// A node with no neighbors attends to itself only.
class GraphAttention {
 public:
  GraphAttention(Index in, Index out, Rng& rng, GatVariant variant = GatVariant::kV2, Index hidden = 0,
                 nn::Activation phi = nn::Activation::kIdentity, Index edge_features = 0);
  Var operator()(const SparseGraph& g, Var x) const;
  /// Attention coefficients aligned with the returned entry list.
  struct Coefficients {
    std::vector<Index> rows, cols;
    Tensor alpha;
  };
  Coefficients coefficients(const SparseGraph& g, const Tensor& x) const;

  GatVariant variant() const { return variant_; }
  Parameter& w() { return w_; }
  Parameter& v() { return v_; }
  Parameter& a() { return a_; }
  std::vector<Parameter*> parameters() { return {&w_, &v_, &a_}; }

  static constexpr double kNegativeSlope = 0.2;

 private:
  Var attention(const SparseGraph& g, Var x, std::vector<Index>& rows, std::vector<Index>& cols) const;

  GatVariant variant_;
  nn::Activation phi_;
  Index edge_width_;
  Parameter w_, v_, a_;
};

enum class Aggregation { kSum, kMean, kMax };

/// Per-edge inputs to a message function, rows aligned with the graph entries.
struct EdgeBatch {
  Var receivers;  // x_i (m, c)
  Var senders;    // x_j (m, c)
  Tensor weights;  // A_ij (m, 1)
  std::optional<Var> features;  // e_ij (m, ce)
};
using MessageFn = std::function<Var(const EdgeBatch&)>;
using UpdateFn = std::function<Var(Var x, Var aggregated)>;

/// h_i = psi(x_i, Aggr{ M(x_i, x_j, e_ij) : j in N(i) }). A node with no
/// neighbors receives zeros under sum; mean and max raise GraphError.
Var message_passing(const SparseGraph& g, Var x, const MessageFn& message, Aggregation aggregation,
                    const UpdateFn& update, std::optional<Var> edge_features = std::nullopt);

// ---------------------------------------------------------------------------
// Batching, pooling, structure

/// Block-diagonal union: node ids are offset per graph and graph_id records
/// where each node came from. Features must share their width.
SparseGraph batch_graphs(const std::vector<SparseGraph>& graphs);

/// Row g of the output reduces the rows of h whose id is g.
Var scatter_reduce(Var h, const std::vector<Index>& graph_id, Index graphs, Aggregation kind);

/// (n, k) matrix whose column t - 1 is diag(R^t), R = A D^-1.
Tensor return_probabilities(const SparseGraph& g, Index steps, bool guard_isolated = false);
/// return_probabilities(g, k) W for W (k, e).
Var random_walk_embedding(const SparseGraph& g, Index steps, Var w);

// ---------------------------------------------------------------------------
// Heads and losses

enum class Task { kNode, kEdge, kGraph };
Task task_from_string(const std::string& name);

/// sigma(H_i^T H_j) for each candidate pair.
Var edge_scores(Var h, const std::vector<std::pair<Index, Index>>& pairs);
/// Mean of node rows per graph.
Var graph_readout(Var h, const std::vector<Index>& graph_id, Index graphs);
/// Cross-entropy averaged over the nodes with mask true only.
Var masked_cross_entropy(Var logits, const std::vector<Index>& labels, const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Files

struct GraphDataset {
  SparseGraph graph;
  std::vector<Index> labels;
  std::vector<bool> train_mask;
};

/// Reads {"n", "edges": [[i, j], ...], "x": [[...], ...], "y": [...], "train_mask": [...]}.
/// Problems raise ConfigError naming the offending field.
GraphDataset load_graph_json(const std::filesystem::path& path);
GraphDataset parse_graph_json(const std::string& text);

}  // namespace difflab::graph
