#include "difflab/graph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "difflab/errors.hpp"
#include "difflab/kernels.hpp"
#include "difflab/nn/layers.hpp"

namespace difflab::graph {

namespace {

Tensor column(const std::vector<double>& values) {
  Tensor t({static_cast<Index>(values.size()), 1});
  for (std::size_t i = 0; i < values.size(); ++i) t[static_cast<Index>(i)] = values[i];
  return t;
}

Var as_matrix(Var x) {
  if (x.value().rank() == 1) return ad::reshape(x, {x.dim(0), 1});
  if (x.value().rank() == 2) return x;
  throw DimensionError("graph signal must be (n) or (n, c), got " + to_string(x.shape()));
}

void check_signal(const SparseGraph& g, const Shape& s) {
  if (s.empty() || s[0] != g.nodes())
    throw DimensionError("graph of " + std::to_string(g.nodes()) + " nodes given a signal of shape " + to_string(s));
}

ad::Scatter to_scatter(Aggregation kind) {
  switch (kind) {
    case Aggregation::kSum: return ad::Scatter::kSum;
    case Aggregation::kMean: return ad::Scatter::kMean;
    case Aggregation::kMax: return ad::Scatter::kMax;
  }
  return ad::Scatter::kSum;
}

}  // namespace

// ---------------------------------------------------------------------------

SparseGraph::SparseGraph(Index nodes, const std::vector<std::pair<Index, Index>>& edges, bool undirected,
                         std::vector<double> weights)
    : nodes_(nodes) {
  if (nodes < 0) throw DimensionError("graph node count must be non-negative");
  if (!weights.empty() && weights.size() != edges.size())
    throw DimensionError("graph: " + std::to_string(weights.size()) + " weights for " + std::to_string(edges.size()) +
                         " edges");
  std::map<std::pair<Index, Index>, double> entries;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i < 0 || i >= nodes || j < 0 || j >= nodes)
      throw DimensionError("edge (" + std::to_string(i) + ", " + std::to_string(j) + ") outside a graph of " +
                           std::to_string(nodes) + " nodes");
    const double w = weights.empty() ? 1.0 : weights[e];
    entries.try_emplace({i, j}, w);
    if (undirected) entries.try_emplace({j, i}, w);
  }
  for (const auto& [key, w] : entries) {
    rows_.push_back(key.first);
    cols_.push_back(key.second);
    weights_.push_back(w);
  }
}

bool SparseGraph::has_edge(Index i, Index j) const {
  for (std::size_t e = 0; e < rows_.size(); ++e)
    if (rows_[e] == i && cols_[e] == j) return true;
  return false;
}

SparseGraph SparseGraph::with_self_loops() const {
  std::vector<bool> looped(static_cast<std::size_t>(nodes_), false);
  for (std::size_t e = 0; e < rows_.size(); ++e)
    if (rows_[e] == cols_[e]) looped[static_cast<std::size_t>(rows_[e])] = true;

  // merge the new diagonal entries into row-major order, carrying edge features along
  std::vector<std::tuple<Index, Index, double, Index>> all;  // row, col, weight, source entry (-1 for new)
  for (std::size_t e = 0; e < rows_.size(); ++e) all.emplace_back(rows_[e], cols_[e], weights_[e], static_cast<Index>(e));
  for (Index i = 0; i < nodes_; ++i)
    if (!looped[static_cast<std::size_t>(i)]) all.emplace_back(i, i, 1.0, -1);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::pair(std::get<0>(a), std::get<1>(a)) < std::pair(std::get<0>(b), std::get<1>(b));
  });

  SparseGraph out = *this;
  out.rows_.clear();
  out.cols_.clear();
  out.weights_.clear();
  std::optional<Tensor> ef;
  if (edge_features) ef = Tensor({static_cast<Index>(all.size()), edge_features->dim(1)});
  for (std::size_t k = 0; k < all.size(); ++k) {
    const auto& [i, j, w, src] = all[k];
    out.rows_.push_back(i);
    out.cols_.push_back(j);
    out.weights_.push_back(w);
    if (ef && src >= 0)
      for (Index c = 0; c < ef->dim(1); ++c) (*ef)(static_cast<Index>(k), c) = (*edge_features)(src, c);
  }
  out.edge_features = ef;
  return out;
}

Tensor degree(const SparseGraph& g) {
  Tensor d({g.nodes()});
  for (Index e = 0; e < g.edge_count(); ++e) d[g.rows()[static_cast<std::size_t>(e)]] += g.weights()[static_cast<std::size_t>(e)];
  return d;
}

ShiftKind shift_kind_from_string(const std::string& name) {
  if (name == "adjacency") return ShiftKind::kAdjacency;
  if (name == "row_norm") return ShiftKind::kRowNorm;
  if (name == "col_norm") return ShiftKind::kColNorm;
  if (name == "sym_norm") return ShiftKind::kSymNorm;
  if (name == "laplacian") return ShiftKind::kLaplacian;
  throw ConfigError("shift: unknown graph shift '" + name + "'");
}

GraphShift graph_shift(const SparseGraph& graph, ShiftKind kind, ShiftOptions options) {
  const SparseGraph g = options.self_loops ? graph.with_self_loops() : graph;
  const Tensor d = degree(g);
  const Index n = g.nodes();
  GraphShift s{kind, n, {}, {}, {}};
  auto push = [&](Index i, Index j, double v) {
    s.rows.push_back(i);
    s.cols.push_back(j);
    s.values.push_back(v);
  };

  if (kind == ShiftKind::kAdjacency) {
    s.rows = g.rows();
    s.cols = g.cols();
    s.values = g.weights();
    return s;
  }
  if (kind == ShiftKind::kLaplacian) {
    std::vector<double> diagonal(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) diagonal[static_cast<std::size_t>(i)] = d[i];
    for (Index e = 0; e < g.edge_count(); ++e) {
      const auto k = static_cast<std::size_t>(e);
      if (g.rows()[k] == g.cols()[k]) diagonal[static_cast<std::size_t>(g.rows()[k])] -= g.weights()[k];
    }
    std::vector<std::tuple<Index, Index, double>> entries;
    for (Index e = 0; e < g.edge_count(); ++e) {
      const auto k = static_cast<std::size_t>(e);
      if (g.rows()[k] != g.cols()[k]) entries.emplace_back(g.rows()[k], g.cols()[k], -g.weights()[k]);
    }
    for (Index i = 0; i < n; ++i)
      if (diagonal[static_cast<std::size_t>(i)] != 0.0) entries.emplace_back(i, i, diagonal[static_cast<std::size_t>(i)]);
    std::sort(entries.begin(), entries.end());
    for (const auto& [i, j, v] : entries) push(i, j, v);
    return s;
  }

  std::vector<bool> isolated(static_cast<std::size_t>(n), false);
  for (Index i = 0; i < n; ++i) {
    if (d[i] != 0.0) continue;
    if (!options.guard_isolated)
      throw GraphError("graph shift: node " + std::to_string(i) + " has zero degree; enable the isolated-node guard");
    isolated[static_cast<std::size_t>(i)] = true;
  }
  auto safe = [&](Index i) { return d[i] != 0.0 ? d[i] : 1.0; };
  std::vector<std::tuple<Index, Index, double>> entries;
  for (Index e = 0; e < g.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    const Index i = g.rows()[k], j = g.cols()[k];
    const double a = g.weights()[k];
    double v = a;
    if (kind == ShiftKind::kRowNorm) v = a / safe(i);
    else if (kind == ShiftKind::kColNorm) v = a / safe(j);
    else v = a / std::sqrt(safe(i) * safe(j));
    entries.emplace_back(i, j, v);
  }
  // isolated nodes have no entries in their row and pass their features through
  for (Index i = 0; i < n; ++i)
    if (isolated[static_cast<std::size_t>(i)]) entries.emplace_back(i, i, 1.0);
  std::sort(entries.begin(), entries.end());
  for (const auto& [i, j, v] : entries) push(i, j, v);
  return s;
}

Var apply_shift(const GraphShift& shift, Var x) {
  check_signal(SparseGraph(shift.nodes, {}), x.shape());
  Var m = as_matrix(x);
  Var gathered = ad::gather_rows(m, shift.cols);
  Var weighted = ad::mul(gathered, column(shift.values));
  Var out = ad::scatter_rows(weighted, shift.rows, shift.nodes, ad::Scatter::kSum);
  return x.value().rank() == 1 ? ad::reshape(out, {shift.nodes}) : out;
}

Tensor apply_shift(const GraphShift& shift, const Tensor& x) {
  Tape tape;
  return apply_shift(shift, tape.input(x)).value();
}

double laplacian_quadratic(const SparseGraph& g, const Tensor& f) {
  check_signal(g, f.shape());
  if (f.rank() > 2) throw DimensionError("laplacian_quadratic: signal must be (n) or (n, c)");
  const Index c = f.rank() == 1 ? 1 : f.dim(1);
  double total = 0.0;
  for (Index e = 0; e < g.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    const Index i = g.rows()[k], j = g.cols()[k];
    for (Index col = 0; col < c; ++col) {
      const double fi = f[i * c + col], fj = f[j * c + col];
      total += g.weights()[k] * fi * (fi - fj);
    }
  }
  return total;
}

Var manifold_penalty(const SparseGraph& g, Var f, double lambda) {
  check_signal(g, f.shape());
  Var m = as_matrix(f);
  Var fi = ad::gather_rows(m, g.rows());
  Var fj = ad::gather_rows(m, g.cols());
  Var terms = ad::mul(ad::mul(fi, ad::sub(fi, fj)), column(g.weights()));
  return ad::scale(ad::sum(terms), lambda);
}

// ---------------------------------------------------------------------------

GraphConv::GraphConv(Index in, Index out, Rng& rng, nn::Activation phi, bool bias)
    : weight_("weight", nn::fan_in_uniform({in, out}, in, rng)), phi_(phi) {
  if (bias) bias_.emplace("bias", nn::fan_in_uniform({out}, in, rng));
}

Var GraphConv::operator()(const GraphShift& shift, Var x) const {
  if (x.value().rank() != 2 || x.dim(1) != weight_.value().dim(0))
    throw DimensionError("graph convolution expects (n, " + std::to_string(weight_.value().dim(0)) +
                         ") features, got " + to_string(x.shape()));
  Tape& tape = x.tape();
  Var h = ad::matmul(x, tape.param(weight_));
  if (bias_) h = ad::add(h, tape.param(*bias_));
  return nn::activate(apply_shift(shift, h), phi_);
}

Var GraphConv::operator()(const SparseGraph& g, Var x) const {
  return (*this)(graph_shift(g, ShiftKind::kSymNorm, {.self_loops = true}), x);
}

std::vector<Parameter*> GraphConv::parameters() {
  std::vector<Parameter*> ps{&weight_};
  if (bias_) ps.push_back(&*bias_);
  return ps;
}

GraphAttention::GraphAttention(Index in, Index out, Rng& rng, GatVariant variant, Index hidden, nn::Activation phi,
                               Index edge_features)
    : variant_(variant), phi_(phi), edge_width_(edge_features) {
  if (hidden <= 0) hidden = out;
  if (variant == GatVariant::kV1 && edge_features > 0)
    throw ContractError("graph attention: edge features are only supported by the v2 scoring function");
  w_ = Parameter("w", nn::fan_in_uniform({in, out}, in, rng));
  if (variant == GatVariant::kV1) {
    v_ = Parameter("v", nn::fan_in_uniform({in, hidden}, in, rng));
    a_ = Parameter("a", nn::fan_in_uniform({2 * hidden}, 2 * hidden, rng));
  } else {
    const Index width = 2 * in + edge_features;
    v_ = Parameter("v", nn::fan_in_uniform({width, hidden}, width, rng));
    a_ = Parameter("a", nn::fan_in_uniform({hidden}, hidden, rng));
  }
}

Var GraphAttention::attention(const SparseGraph& g, Var x, std::vector<Index>& rows, std::vector<Index>& cols) const {
  check_signal(g, x.shape());
  if (x.value().rank() != 2 || x.dim(1) != w_.value().dim(0))
    throw DimensionError("graph attention expects (n, " + std::to_string(w_.value().dim(0)) + ") features, got " +
                         to_string(x.shape()));
  if (edge_width_ > 0 && (!g.edge_features || g.edge_features->dim(1) != edge_width_ ||
                          g.edge_features->dim(0) != g.edge_count()))
    throw DimensionError("graph attention expects edge features of width " + std::to_string(edge_width_));
  const Index n = g.nodes();
  rows = g.rows();
  cols = g.cols();
  std::vector<bool> has_neighbor(static_cast<std::size_t>(n), false);
  for (Index i : rows) has_neighbor[static_cast<std::size_t>(i)] = true;
  std::vector<Index> lonely;
  for (Index i = 0; i < n; ++i)
    if (!has_neighbor[static_cast<std::size_t>(i)]) {
      rows.push_back(i);
      cols.push_back(i);
      lonely.push_back(i);
    }
  const Index m = static_cast<Index>(rows.size());

  Tape& tape = x.tape();
  Var v = tape.param(v_);
  Var a = tape.param(a_);
  Var scores;
  if (variant_ == GatVariant::kV1) {
    const Index hidden = v_.value().dim(1);
    Var z = ad::matmul(x, v);
    Var to_self = ad::matmul(z, ad::reshape(ad::slice(a, 0, 0, hidden), {hidden, 1}));
    Var to_other = ad::matmul(z, ad::reshape(ad::slice(a, 0, hidden, 2 * hidden), {hidden, 1}));
    scores = ad::leaky_relu(ad::add(ad::gather_rows(to_self, rows), ad::gather_rows(to_other, cols)), kNegativeSlope);
  } else {
    std::vector<Var> parts{ad::gather_rows(x, rows), ad::gather_rows(x, cols)};
    if (edge_width_ > 0) {
      Tensor ef = *g.edge_features;
      if (!lonely.empty()) ef = concat({ef, Tensor({static_cast<Index>(lonely.size()), edge_width_})}, 0);
      parts.push_back(tape.constant(ef));
    }
    Var pair = ad::concat(parts, 1);
    Var hidden = ad::leaky_relu(ad::matmul(pair, v), kNegativeSlope);
    scores = ad::matmul(hidden, ad::reshape(a, {a.dim(0), 1}));
  }
  return ad::segment_softmax(ad::reshape(scores, {m}), rows, n);
}

Var GraphAttention::operator()(const SparseGraph& g, Var x) const {
  std::vector<Index> rows, cols;
  Var alpha = attention(g, x, rows, cols);
  const Index m = static_cast<Index>(rows.size());
  Var messages = ad::gather_rows(ad::matmul(x, x.tape().param(w_)), cols);
  Var weighted = ad::mul(messages, ad::reshape(alpha, {m, 1}));
  return nn::activate(ad::scatter_rows(weighted, rows, g.nodes(), ad::Scatter::kSum), phi_);
}

GraphAttention::Coefficients GraphAttention::coefficients(const SparseGraph& g, const Tensor& x) const {
  Tape tape;
  Coefficients out;
  out.alpha = attention(g, tape.input(x), out.rows, out.cols).value();
  return out;
}

Var message_passing(const SparseGraph& g, Var x, const MessageFn& message, Aggregation aggregation,
                    const UpdateFn& update, std::optional<Var> edge_features) {
  check_signal(g, x.shape());
  if (aggregation != Aggregation::kSum) {
    std::vector<bool> seen(static_cast<std::size_t>(g.nodes()), false);
    for (Index i : g.rows()) seen[static_cast<std::size_t>(i)] = true;
    for (Index i = 0; i < g.nodes(); ++i)
      if (!seen[static_cast<std::size_t>(i)])
        throw GraphError("message passing: node " + std::to_string(i) +
                         " has an empty neighborhood; mean and max are undefined there (add self-loops)");
  }
  if (!edge_features && g.edge_features) edge_features = x.tape().constant(*g.edge_features);
  if (edge_features && edge_features->dim(0) != g.edge_count())
    throw DimensionError("message passing: " + std::to_string(edge_features->dim(0)) + " edge feature rows for " +
                         std::to_string(g.edge_count()) + " edges");
  EdgeBatch batch{ad::gather_rows(x, g.rows()), ad::gather_rows(x, g.cols()), column(g.weights()), edge_features};
  Var messages = message(batch);
  if (messages.value().rank() != 2 || messages.dim(0) != g.edge_count())
    throw DimensionError("message function must return one row per edge, got " + to_string(messages.shape()));
  Var aggregated = ad::scatter_rows(messages, g.rows(), g.nodes(), to_scatter(aggregation));
  return update(x, aggregated);
}

// ---------------------------------------------------------------------------

SparseGraph batch_graphs(const std::vector<SparseGraph>& graphs) {
  if (graphs.empty()) throw ContractError("batch_graphs: no graphs given");
  const Index width = graphs.front().features.rank() == 2 ? graphs.front().features.dim(1) : -1;
  const bool with_edges = graphs.front().edge_features.has_value();
  std::vector<std::pair<Index, Index>> edges;
  std::vector<double> weights;
  std::vector<Tensor> features, edge_features;
  std::vector<Index> ids;
  Index offset = 0;
  for (std::size_t b = 0; b < graphs.size(); ++b) {
    const SparseGraph& g = graphs[b];
    const Index w = g.features.rank() == 2 ? g.features.dim(1) : -1;
    if (w != width)
      throw DimensionError("batch_graphs: graph " + std::to_string(b) + " has feature width " + std::to_string(w) +
                           ", expected " + std::to_string(width));
    if (g.edge_features.has_value() != with_edges)
      throw DimensionError("batch_graphs: graphs disagree on the presence of edge features");
    if (w >= 0 && g.features.dim(0) != g.nodes())
      throw DimensionError("batch_graphs: graph " + std::to_string(b) + " features do not match its node count");
    for (Index e = 0; e < g.edge_count(); ++e) {
      const auto k = static_cast<std::size_t>(e);
      edges.emplace_back(g.rows()[k] + offset, g.cols()[k] + offset);
      weights.push_back(g.weights()[k]);
    }
    if (w >= 0) features.push_back(g.features);
    if (with_edges) edge_features.push_back(*g.edge_features);
    ids.insert(ids.end(), static_cast<std::size_t>(g.nodes()), static_cast<Index>(b));
    offset += g.nodes();
  }
  // entries are already row-sorted within each block and blocks are offset, so the order is preserved
  SparseGraph out(offset, edges, false, weights);
  if (!features.empty()) out.features = concat(features, 0);
  if (with_edges) out.edge_features = concat(edge_features, 0);
  out.graph_id = std::move(ids);
  out.graphs = static_cast<Index>(graphs.size());
  return out;
}

Var scatter_reduce(Var h, const std::vector<Index>& graph_id, Index graphs, Aggregation kind) {
  if (h.value().rank() != 2 || h.dim(0) != static_cast<Index>(graph_id.size()))
    throw DimensionError("scatter_reduce: " + std::to_string(graph_id.size()) + " ids for rows of shape " +
                         to_string(h.shape()));
  if (kind != Aggregation::kSum) {
    std::vector<bool> seen(static_cast<std::size_t>(graphs), false);
    for (Index id : graph_id)
      if (id >= 0 && id < graphs) seen[static_cast<std::size_t>(id)] = true;
    for (Index b = 0; b < graphs; ++b)
      if (!seen[static_cast<std::size_t>(b)])
        throw GraphError("scatter_reduce: graph " + std::to_string(b) + " has no nodes to reduce");
  }
  return ad::scatter_rows(h, graph_id, graphs, to_scatter(kind));
}

Tensor return_probabilities(const SparseGraph& g, Index steps, bool guard_isolated) {
  if (steps < 1) throw ContractError("random walk embedding needs at least one step");
  const Index n = g.nodes();
  const Tensor d = degree(g);
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index e = 0; e < g.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    const Index j = g.cols()[k];
    if (d[j] == 0.0) {
      if (!guard_isolated) throw GraphError("random walk: node " + std::to_string(j) + " has zero degree");
      continue;
    }
    triplets.emplace_back(g.rows()[k], j, g.weights()[k] / d[j]);
  }
  for (Index i = 0; i < n; ++i)
    if (d[i] == 0.0) {
      if (!guard_isolated) throw GraphError("random walk: node " + std::to_string(i) + " has zero degree");
      triplets.emplace_back(i, i, 1.0);
    }
  Eigen::SparseMatrix<double> r(n, n);
  r.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  Tensor out({n, steps});
  for (Index t = 0; t < steps; ++t) {
    power = r * power;
    for (Index i = 0; i < n; ++i) out(i, t) = power(i, i);
  }
  return out;
}

Var random_walk_embedding(const SparseGraph& g, Index steps, Var w) {
  if (w.value().rank() != 2 || w.dim(0) != steps)
    throw DimensionError("random walk projection must have " + std::to_string(steps) + " rows");
  return ad::matmul(w.tape().constant(return_probabilities(g, steps)), w);
}

// ---------------------------------------------------------------------------

Task task_from_string(const std::string& name) {
  if (name == "node") return Task::kNode;
  if (name == "edge") return Task::kEdge;
  if (name == "graph") return Task::kGraph;
  throw ConfigError("task: unknown graph task '" + name + "'");
}

Var edge_scores(Var h, const std::vector<std::pair<Index, Index>>& pairs) {
  std::vector<Index> left, right;
  for (const auto& [i, j] : pairs) {
    left.push_back(i);
    right.push_back(j);
  }
  Var dots = ad::sum(ad::mul(ad::gather_rows(h, left), ad::gather_rows(h, right)), {1});
  return ad::sigmoid(dots);
}

Var graph_readout(Var h, const std::vector<Index>& graph_id, Index graphs) {
  return scatter_reduce(h, graph_id, graphs, Aggregation::kMean);
}

Var masked_cross_entropy(Var logits, const std::vector<Index>& labels, const std::vector<bool>& mask) {
  if (logits.value().rank() != 2) throw DimensionError("masked_cross_entropy: logits must be (n, classes)");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(mask.size()) != n)
    throw DimensionError("masked_cross_entropy: labels and mask must have one entry per node");
  std::vector<Index> chosen;
  for (Index i = 0; i < n; ++i)
    if (mask[static_cast<std::size_t>(i)]) chosen.push_back(i);
  if (chosen.empty()) throw ContractError("masked_cross_entropy: the mask selects no nodes");
  Tensor onehot({static_cast<Index>(chosen.size()), k});
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const Index y = labels[static_cast<std::size_t>(chosen[r])];
    if (y < 0 || y >= k) throw DimensionError("masked_cross_entropy: label " + std::to_string(y) + " out of range");
    onehot(static_cast<Index>(r), y) = 1.0;
  }
  Var z = ad::gather_rows(logits, chosen);
  Var picked = ad::sum(ad::mul(z, onehot), {1});
  return ad::mean(ad::sub(ad::logsumexp(z), picked));
}

// ---------------------------------------------------------------------------

GraphDataset parse_graph_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("<root>: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("<root>: expected an object");
  if (!doc.contains("n") || !doc["n"].is_number_integer() || doc["n"].get<Index>() < 0)
    throw ConfigError("n: expected a non-negative integer");
  const Index n = doc["n"].get<Index>();

  std::vector<std::pair<Index, Index>> edges;
  if (!doc.contains("edges") || !doc["edges"].is_array()) throw ConfigError("edges: expected an array of [i, j] pairs");
  for (std::size_t e = 0; e < doc["edges"].size(); ++e) {
    const auto& pair = doc["edges"][e];
    const std::string where = "edges[" + std::to_string(e) + "]";
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number_integer())
      throw ConfigError(where + ": expected [i, j]");
    const Index i = pair[0].get<Index>(), j = pair[1].get<Index>();
    if (i < 0 || i >= n || j < 0 || j >= n) throw ConfigError(where + ": node index outside [0, n)");
    edges.emplace_back(i, j);
  }
  GraphDataset data{SparseGraph(n, edges), {}, {}};

  if (doc.contains("x")) {
    const auto& x = doc["x"];
    if (!x.is_array() || static_cast<Index>(x.size()) != n) throw ConfigError("x: expected n rows");
    const Index width = n > 0 && x[0].is_array() ? static_cast<Index>(x[0].size()) : 0;
    Tensor features({n, width});
    for (Index i = 0; i < n; ++i) {
      const auto& row = x[static_cast<std::size_t>(i)];
      const std::string where = "x[" + std::to_string(i) + "]";
      if (!row.is_array() || static_cast<Index>(row.size()) != width)
        throw ConfigError(where + ": expected " + std::to_string(width) + " numbers");
      for (Index c = 0; c < width; ++c) {
        if (!row[static_cast<std::size_t>(c)].is_number())
          throw ConfigError(where + "[" + std::to_string(c) + "]: expected a number");
        features(i, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
    }
    data.graph.features = features;
  }
  if (doc.contains("y")) {
    const auto& y = doc["y"];
    if (!y.is_array() || static_cast<Index>(y.size()) != n) throw ConfigError("y: expected n labels");
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!y[i].is_number_integer() || y[i].get<Index>() < 0)
        throw ConfigError("y[" + std::to_string(i) + "]: expected a non-negative integer label");
      data.labels.push_back(y[i].get<Index>());
    }
  }
  if (doc.contains("train_mask")) {
    const auto& m = doc["train_mask"];
    if (!m.is_array() || static_cast<Index>(m.size()) != n) throw ConfigError("train_mask: expected n booleans");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_boolean()) throw ConfigError("train_mask[" + std::to_string(i) + "]: expected a boolean");
      data.train_mask.push_back(m[i].get<bool>());
    }
  }
  return data;
}

GraphDataset load_graph_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open graph file");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_graph_json(buffer.str());
}

}  // namespace difflab::graph
