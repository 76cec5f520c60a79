#include <cmath>
#include <set>

#include <Eigen/Dense>

#include "difflab/autodiff/gradcheck.hpp"
#include "difflab/errors.hpp"
#include "difflab/graph/graph.hpp"
#include "difflab/nn/layers.hpp"
#include "support.hpp"

using namespace difflab;
using ad::Tape;
using ad::Var;
using testing::max_diff;
using testing::random_tensor;

namespace {

graph::SparseGraph random_graph(Rng& rng, Index n, double p, bool undirected = true, bool weighted = false) {
  std::vector<std::pair<Index, Index>> edges;
  std::vector<double> weights;
  for (Index i = 0; i < n; ++i)
    for (Index j = undirected ? i + 1 : 0; j < n; ++j)
      if (i != j && rng.bernoulli(p)) {
        edges.emplace_back(i, j);
        weights.push_back(weighted ? rng.uniform(0.5, 2.0) : 1.0);
      }
  return graph::SparseGraph(n, edges, undirected, weighted ? weights : std::vector<double>{});
}

Eigen::MatrixXd dense(const graph::SparseGraph& g) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.nodes(), g.nodes());
  for (Index e = 0; e < g.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    a(g.rows()[k], g.cols()[k]) += g.weights()[k];
  }
  return a;
}

Eigen::MatrixXd dense(const graph::GraphShift& s) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s.nodes, s.nodes);
  for (std::size_t k = 0; k < s.values.size(); ++k) a(s.rows[k], s.cols[k]) += s.values[k];
  return a;
}

Eigen::MatrixXd mat(const Tensor& t) { return t.rows_view(); }

// Relabels nodes so that new node i is old node p[i].
graph::SparseGraph permute(const graph::SparseGraph& g, const std::vector<Index>& p) {
  std::vector<Index> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<Index>(i);
  std::vector<std::pair<Index, Index>> edges;
  for (Index e = 0; e < g.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    edges.emplace_back(inv[static_cast<std::size_t>(g.rows()[k])], inv[static_cast<std::size_t>(g.cols()[k])]);
  }
  graph::SparseGraph out(g.nodes(), edges, false, g.weights().empty() ? std::vector<double>{} : [&] {
    std::vector<double> w;
    for (Index e = 0; e < g.edge_count(); ++e) w.push_back(g.weights()[static_cast<std::size_t>(e)]);
    return w;
  }());
  return out;
}

double leaky(double x) { return x > 0 ? x : graph::GraphAttention::kNegativeSlope * x; }

// Per-node loop oracle for both attention variants, returning (alpha matrix, output).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> loop_gat(graph::GraphAttention& gat, const graph::SparseGraph& g,
                                                     const Tensor& x) {
  const Index n = g.nodes();
  const Eigen::MatrixXd xm = mat(x);
  const Eigen::MatrixXd w = mat(gat.w().value()), v = mat(gat.v().value());
  const Tensor& a = gat.a().value();
  Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> nb;
    for (Index j = 0; j < n; ++j)
      if (g.has_edge(i, j)) nb.push_back(j);
    if (nb.empty()) nb.push_back(i);
    std::vector<double> s;
    for (Index j : nb) {
      double score = 0.0;
      if (gat.variant() == graph::GatVariant::kV1) {
        const Eigen::VectorXd zi = v.transpose() * xm.row(i).transpose(), zj = v.transpose() * xm.row(j).transpose();
        const Index hdim = zi.size();
        for (Index c = 0; c < hdim; ++c) score += a[c] * zi[c] + a[hdim + c] * zj[c];
        score = leaky(score);
      } else {
        Eigen::VectorXd cat(2 * xm.cols());
        cat << xm.row(i).transpose(), xm.row(j).transpose();
        const Eigen::VectorXd hidden = v.transpose() * cat;
        for (Index c = 0; c < hidden.size(); ++c) score += a[c] * leaky(hidden[c]);
      }
      s.push_back(score);
    }
    double top = *std::max_element(s.begin(), s.end()), total = 0.0;
    for (double& e : s) total += (e = std::exp(e - top));
    for (std::size_t k = 0; k < nb.size(); ++k) alpha(i, nb[k]) = s[k] / total;
  }
  return {alpha, alpha * xm * w};
}

}  // namespace

TEST_CASE("degree") {
  CHECK(graph::degree(graph::SparseGraph(4, {})).array().abs().maxCoeff() == 0.0);
  std::vector<std::pair<Index, Index>> all;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) all.emplace_back(i, j);
  const Tensor d = graph::degree(graph::SparseGraph(4, all));
  for (Index i = 0; i < 4; ++i) CHECK(d[i] == 4.0);

  Rng rng(1);
  for (bool undirected : {true, false}) {
    const auto g = random_graph(rng, 9, 0.4, undirected, true);
    const Eigen::VectorXd rows = dense(g).rowwise().sum();
    const Tensor deg = graph::degree(g);
    for (Index i = 0; i < 9; ++i) CHECK(deg[i] == doctest::Approx(rows[i]).epsilon(1e-14));
  }
}

TEST_CASE("undirected storage and idempotent self-loops") {
  graph::SparseGraph g(3, {{0, 2}, {2, 0}, {1, 2}});
  CHECK(g.edge_count() == 4);
  for (Index e = 0; e < g.edge_count(); ++e) CHECK(g.has_edge(g.cols()[static_cast<std::size_t>(e)], g.rows()[static_cast<std::size_t>(e)]));
  const auto looped = g.with_self_loops();
  CHECK(looped.edge_count() == 7);
  CHECK(looped.with_self_loops().edge_count() == 7);
  CHECK((dense(looped) - dense(g) - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
  CHECK_THROWS_AS(graph::SparseGraph(3, {{0, 3}}), DimensionError);
}

TEST_CASE("graph shifts match dense oracles") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_graph(rng, 8, 0.35, trial % 2 == 0, true).with_self_loops();
    const Eigen::MatrixXd a = dense(g);
    const Eigen::VectorXd d = a.rowwise().sum();
    const Eigen::MatrixXd dinv = d.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd dhalf = d.cwiseSqrt().cwiseInverse().asDiagonal();
    CHECK((dense(graph::graph_shift(g, graph::ShiftKind::kAdjacency)) - a).norm() < 1e-14);
    CHECK((dense(graph::graph_shift(g, graph::ShiftKind::kRowNorm)) - dinv * a).norm() < 1e-12);
    CHECK((dense(graph::graph_shift(g, graph::ShiftKind::kColNorm)) - a * dinv).norm() < 1e-12);
    CHECK((dense(graph::graph_shift(g, graph::ShiftKind::kSymNorm)) - dhalf * a * dhalf).norm() < 1e-12);
    const Eigen::MatrixXd lap = dense(graph::graph_shift(g, graph::ShiftKind::kLaplacian));
    CHECK((lap - (Eigen::MatrixXd(d.asDiagonal()) - a)).norm() < 1e-12);
    CHECK((lap * Eigen::VectorXd::Ones(8)).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::VectorXd row_sums = dense(graph::graph_shift(g, graph::ShiftKind::kRowNorm)).rowwise().sum();
    CHECK((row_sums.array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("Laplacian annihilates constants even without self-loops") {
  Rng rng(3);
  const auto g = random_graph(rng, 10, 0.3, false, true);
  const Tensor ones = Tensor::ones({10, 1});
  CHECK(graph::apply_shift(graph::graph_shift(g, graph::ShiftKind::kLaplacian), ones).array().abs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-degree nodes need the guard") {
  graph::SparseGraph g(3, {{0, 1}});
  CHECK_THROWS_AS(graph::graph_shift(g, graph::ShiftKind::kRowNorm), GraphError);
  CHECK_THROWS_AS(graph::graph_shift(g, graph::ShiftKind::kSymNorm), GraphError);
  CHECK_NOTHROW(graph::graph_shift(g, graph::ShiftKind::kAdjacency));
  const auto s = graph::graph_shift(g, graph::ShiftKind::kSymNorm, {.guard_isolated = true});
  const Tensor x({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor y = graph::apply_shift(s, x);
  CHECK(y(2, 0) == 5.0);
  CHECK(y(2, 1) == 6.0);
  CHECK(y(0, 0) == 3.0);
}

TEST_CASE("Laplacian quadratic form") {
  Rng rng(4);
  const auto g = random_graph(rng, 7, 0.5);
  CHECK(graph::laplacian_quadratic(g, Tensor::full({7}, 2.5)) == 0.0);

  // one undirected edge stored as (0,1) and (1,0): sum over ordered pairs of A_ij f_i (f_i - f_j)
  graph::SparseGraph pair(2, {{0, 1}});
  const Tensor f = Tensor::vector({0.0, 1.0});
  double edge_loop = 0.0;
  for (Index e = 0; e < pair.edge_count(); ++e) {
    const Index i = pair.rows()[static_cast<std::size_t>(e)], j = pair.cols()[static_cast<std::size_t>(e)];
    edge_loop += f[i] * (f[i] - f[j]);
  }
  CHECK(graph::laplacian_quadratic(pair, f) == edge_loop);
  CHECK(graph::laplacian_quadratic(pair, f) == 1.0);

  for (bool undirected : {true, false}) {
    const auto h = random_graph(rng, 9, 0.4, undirected, true);
    const Eigen::MatrixXd a = dense(h);
    const Eigen::MatrixXd lap = Eigen::MatrixXd(a.rowwise().sum().asDiagonal()) - a;
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor v = random_tensor(rng, {9});
      const Eigen::VectorXd vv = Eigen::Map<const Eigen::VectorXd>(v.data(), 9);
      CHECK(std::abs(graph::laplacian_quadratic(h, v) - vv.dot(lap * vv)) < 1e-10);
      if (undirected) {
        CHECK(graph::laplacian_quadratic(h, v) >= 0.0);
        // over ordered pairs the squared-difference sum counts each edge twice
        double squares = 0.0;
        for (Index i = 0; i < 9; ++i)
          for (Index j = 0; j < 9; ++j) squares += a(i, j) * (v[i] - v[j]) * (v[i] - v[j]);
        CHECK(graph::laplacian_quadratic(h, v) == doctest::Approx(0.5 * squares).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(graph::laplacian_quadratic(g, Tensor({6})), DimensionError);
}

TEST_CASE("manifold penalty value and gradient") {
  Rng rng(5);
  const auto g = random_graph(rng, 6, 0.5);
  const Eigen::MatrixXd a = dense(g);
  const Eigen::MatrixXd lap = Eigen::MatrixXd(a.rowwise().sum().asDiagonal()) - a;
  const Tensor f = random_tensor(rng, {6, 2});
  Tape tape;
  Var fv = tape.input(f);
  Var penalty = graph::manifold_penalty(g, fv, 0.3);
  CHECK(penalty.value()[0] == doctest::Approx(0.3 * graph::laplacian_quadratic(g, f)).epsilon(1e-13));
  const Tensor grad = ad::backward(tape, penalty).wrt(fv);
  // d/df lambda tr(f^T L f) = 2 lambda L f for symmetric L
  CHECK((mat(grad) - 0.6 * lap * mat(f)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("graph convolution matches the dense oracle") {
  Rng rng(6);
  const auto g = random_graph(rng, 6, 0.4);
  graph::GraphConv gc(3, 4, rng, nn::Activation::kTanh);
  const Tensor x = random_tensor(rng, {6, 3});
  const auto looped = g.with_self_loops();
  const Eigen::MatrixXd a = dense(looped);
  const Eigen::MatrixXd dh = a.rowwise().sum().cwiseSqrt().cwiseInverse().asDiagonal();
  Eigen::MatrixXd pre = mat(x) * mat(gc.weight().value());
  pre.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(gc.bias()->value().data(), 4);
  const Eigen::MatrixXd expected = (dh * a * dh * pre).array().tanh();
  const Tensor y = testing::eval([&](Var v) { return gc(g, v); }, x);
  CHECK((mat(y) - expected).cwiseAbs().maxCoeff() < 1e-12);

  // self-loops only: a per-node fully connected layer
  const auto identity = graph::graph_shift(graph::SparseGraph(6, {}).with_self_loops(), graph::ShiftKind::kAdjacency);
  const Tensor fc = testing::eval([&](Var v) { return gc(identity, v); }, x);
  CHECK((mat(fc) - Eigen::MatrixXd(pre.array().tanh())).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(testing::eval([&](Var v) { return gc(g, v); }, random_tensor(rng, {6, 4})), DimensionError);
}

TEST_CASE("graph layers are permutation equivariant") {
  Rng rng(7);
  const auto g = random_graph(rng, 7, 0.4);
  const Tensor x = random_tensor(rng, {7, 3});
  graph::GraphConv gc(3, 2, rng);
  graph::GraphAttention v1(3, 2, rng, graph::GatVariant::kV1);
  graph::GraphAttention v2(3, 2, rng, graph::GatVariant::kV2);
  for (int trial = 0; trial < 3; ++trial) {
    const auto p = testing::permutation(rng, 7);
    const auto pg = permute(g, p);
    const Tensor px = testing::permute_rows(x, p);
    auto check = [&](const std::function<Var(const graph::SparseGraph&, Var)>& layer) {
      const Tensor lhs = testing::eval([&](Var v) { return layer(pg, v); }, px);
      const Tensor rhs = testing::permute_rows(testing::eval([&](Var v) { return layer(g, v); }, x), p);
      CHECK(max_diff(lhs, rhs) < 1e-12);
    };
    check([&](const graph::SparseGraph& h, Var v) { return gc(h, v); });
    check([&](const graph::SparseGraph& h, Var v) { return v1(h, v); });
    check([&](const graph::SparseGraph& h, Var v) { return v2(h, v); });
  }
}

TEST_CASE("graph convolution is local and stacks grow the receptive field") {
  Rng rng(8);
  const auto g = random_graph(rng, 10, 0.2);
  const auto shift = graph::graph_shift(g, graph::ShiftKind::kSymNorm, {.self_loops = true, .guard_isolated = true});
  graph::GraphConv l1(2, 3, rng, nn::Activation::kTanh), l2(3, 3, rng, nn::Activation::kTanh),
      l3(3, 2, rng, nn::Activation::kTanh);
  const Tensor x = random_tensor(rng, {10, 2});

  const Tensor base = testing::eval([&](Var v) { return l1(shift, v); }, x);
  for (Index j = 0; j < 10; ++j) {
    Tensor moved = x;
    moved(j, 0) += 1.0;
    moved(j, 1) -= 0.5;
    const Tensor y = testing::eval([&](Var v) { return l1(shift, v); }, moved);
    for (Index i = 0; i < 10; ++i)
      if (i != j && !g.has_edge(i, j)) CHECK(y(i, 0) == base(i, 0));
  }

  // k layers: node i depends exactly on N^k(i)
  const Eigen::MatrixXd reach1 = (dense(g.with_self_loops()).array() != 0.0).cast<double>();
  std::vector<std::function<Var(Var)>> stack{[&](Var v) { return l1(shift, v); },
                                             [&](Var v) { return l2(shift, l1(shift, v)); },
                                             [&](Var v) { return l3(shift, l2(shift, l1(shift, v))); }};
  Eigen::MatrixXd reach = reach1;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    const Eigen::MatrixXd expected = (reach.array() != 0.0).cast<double>();
    for (Index j = 0; j < 10; ++j) {
      Tensor u = Tensor::zeros({10, 2});
      u(j, 0) = 1.0;
      u(j, 1) = 0.7;
      const Tensor dy = ad::jvp(stack[k], x, u);
      for (Index i = 0; i < 10; ++i) {
        double block = 0.0;
        for (Index c = 0; c < dy.dim(1); ++c) block = std::max(block, std::abs(dy(i, c)));
        CHECK((block != 0.0) == (expected(i, j) != 0.0));
      }
    }
    reach = reach * reach1;
  }
}

TEST_CASE("graph attention matches the per-node loop oracle") {
  Rng rng(9);
  const auto g = random_graph(rng, 5, 0.5);
  const Tensor x = random_tensor(rng, {5, 3});
  for (auto variant : {graph::GatVariant::kV1, graph::GatVariant::kV2}) {
    graph::GraphAttention gat(3, 4, rng, variant, 5);
    const auto [alpha, expected] = loop_gat(gat, g, x);
    const Tensor y = testing::eval([&](Var v) { return gat(g, v); }, x);
    CHECK((mat(y) - expected).cwiseAbs().maxCoeff() < 1e-12);
    const auto coef = gat.coefficients(g, x);
    std::vector<double> sums(5, 0.0);
    for (std::size_t k = 0; k < coef.rows.size(); ++k) {
      CHECK(coef.alpha[static_cast<Index>(k)] == doctest::Approx(alpha(coef.rows[k], coef.cols[k])).epsilon(1e-13));
      sums[static_cast<std::size_t>(coef.rows[k])] += coef.alpha[static_cast<Index>(k)];
    }
    for (double s : sums) CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("graph attention on tiny neighborhoods") {
  Rng rng(10);
  // node 0 <- node 1 only, node 2 has nobody
  graph::SparseGraph g(3, {{0, 1}}, false);
  const Tensor x = random_tensor(rng, {3, 2});
  for (auto variant : {graph::GatVariant::kV1, graph::GatVariant::kV2}) {
    graph::GraphAttention gat(2, 3, rng, variant);
    const auto coef = gat.coefficients(g, x);
    REQUIRE(coef.rows.size() == 3);
    for (Index k = 0; k < 3; ++k) CHECK(coef.alpha[k] == 1.0);
    const Tensor y = testing::eval([&](Var v) { return gat(g, v); }, x);
    const Tensor xw = matmul(x, gat.w().value());
    for (Index c = 0; c < 3; ++c) {
      CHECK(y(0, c) == doctest::Approx(xw(1, c)));
      CHECK(y(2, c) == doctest::Approx(xw(2, c)));
    }
  }
}

TEST_CASE("GATv2 ordering depends on the central node, v1 does not") {
  Rng rng(11);
  std::vector<std::pair<Index, Index>> edges;
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) edges.emplace_back(i, j);
  graph::SparseGraph g(6, edges, false);
  const Tensor x = random_tensor(rng, {6, 3}, -2, 2);
  // receivers i and i2 agree on the ordering of every pair of senders
  auto consistent = [&](graph::GraphAttention& gat) {
    const auto coef = gat.coefficients(g, x);
    Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(6, 6);
    for (std::size_t k = 0; k < coef.rows.size(); ++k) alpha(coef.rows[k], coef.cols[k]) = coef.alpha[static_cast<Index>(k)];
    for (Index i = 0; i < 6; ++i)
      for (Index i2 = 0; i2 < 6; ++i2)
        for (Index j = 0; j < 6; ++j)
          for (Index j2 = 0; j2 < 6; ++j2)
            if ((alpha(i, j) > alpha(i, j2)) != (alpha(i2, j) > alpha(i2, j2)) &&
                std::abs(alpha(i, j) - alpha(i, j2)) > 1e-12 && std::abs(alpha(i2, j) - alpha(i2, j2)) > 1e-12)
              return false;
    return true;
  };
  for (int trial = 0; trial < 3; ++trial) {
    graph::GraphAttention v1(3, 2, rng, graph::GatVariant::kV1, 4);
    CHECK(consistent(v1));
  }
  graph::GraphAttention v2(3, 2, rng, graph::GatVariant::kV2, 8);
  CHECK(!consistent(v2));
}

TEST_CASE("graph attention with edge features") {
  Rng rng(12);
  auto g = random_graph(rng, 5, 0.6);
  g.edge_features = random_tensor(rng, {g.edge_count(), 2});
  graph::GraphAttention gat(3, 2, rng, graph::GatVariant::kV2, 4, nn::Activation::kIdentity, 2);
  CHECK(gat.v().value().shape() == Shape{8, 4});
  const Tensor x = random_tensor(rng, {5, 3});
  const Tensor y = testing::eval([&](Var v) { return gat(g, v); }, x);
  CHECK(y.shape() == Shape{5, 2});
  auto shuffled = g;
  shuffled.edge_features = random_tensor(rng, {g.edge_count(), 2});
  CHECK(max_diff(testing::eval([&](Var v) { return gat(shuffled, v); }, x), y) > 1e-6);
  CHECK_THROWS_AS(graph::GraphAttention(3, 2, rng, graph::GatVariant::kV1, 4, nn::Activation::kIdentity, 2),
                  ContractError);
  graph::SparseGraph bare = random_graph(rng, 5, 0.6);
  CHECK_THROWS_AS(testing::eval([&](Var v) { return gat(bare, v); }, x), DimensionError);
}

TEST_CASE("graph layers pass gradient checks") {
  Rng rng(13);
  const auto g = random_graph(rng, 5, 0.5);
  const Tensor x = random_tensor(rng, {5, 3});
  graph::GraphConv gc(3, 2, rng, nn::Activation::kTanh);
  CHECK(ad::grad_check([&](Tape& t) { return ad::sum(ad::square(gc(g, t.input(x)))); }, gc.parameters(),
                       {.tolerance = 1e-6}, "graph conv")
            .pass);
  for (auto variant : {graph::GatVariant::kV1, graph::GatVariant::kV2}) {
    graph::GraphAttention gat(3, 2, rng, variant, 3, nn::Activation::kTanh);
    CHECK(ad::grad_check([&](Tape& t) { return ad::sum(ad::square(gat(g, t.input(x)))); }, gat.parameters(),
                         {.tolerance = 1e-6}, "graph attention")
              .pass);
  }
}

TEST_CASE("message passing") {
  Rng rng(14);
  const auto g = random_graph(rng, 6, 0.4).with_self_loops();
  const Tensor x = random_tensor(rng, {6, 3});
  auto second = [](Var, Var m) { return m; };
  auto sender = [](const graph::EdgeBatch& e) { return e.senders; };

  const Tensor sums = testing::eval(
      [&](Var v) { return graph::message_passing(g, v, sender, graph::Aggregation::kSum, second); }, x);
  CHECK((mat(sums) - dense(g) * mat(x)).cwiseAbs().maxCoeff() < 1e-14);

  const Tensor maxes = testing::eval(
      [&](Var v) { return graph::message_passing(g, v, sender, graph::Aggregation::kMax, second); }, x);
  const Tensor means = testing::eval(
      [&](Var v) { return graph::message_passing(g, v, sender, graph::Aggregation::kMean, second); }, x);
  for (Index i = 0; i < 6; ++i)
    for (Index c = 0; c < 3; ++c) {
      double top = -1e300, total = 0.0;
      int count = 0;
      for (Index j = 0; j < 6; ++j)
        if (g.has_edge(i, j)) {
          top = std::max(top, x(j, c));
          total += x(j, c);
          ++count;
        }
      CHECK(maxes(i, c) == top);
      CHECK(means(i, c) == doctest::Approx(total / count).epsilon(1e-14));
    }

  // GC as M = A_ij W^T x_j, sum, psi = phi
  graph::GraphConv gc(3, 2, rng, nn::Activation::kRelu, false);
  const auto shift = graph::graph_shift(g, graph::ShiftKind::kRowNorm);
  graph::SparseGraph weighted(6, [&] {
    std::vector<std::pair<Index, Index>> e;
    for (std::size_t k = 0; k < shift.rows.size(); ++k) e.emplace_back(shift.rows[k], shift.cols[k]);
    return e;
  }(), false, shift.values);
  const Tensor via_mp = testing::eval(
      [&](Var v) {
        Var w = v.tape().param(gc.weight());
        return graph::message_passing(
            weighted, v, [&](const graph::EdgeBatch& e) { return ad::mul(ad::matmul(e.senders, w), e.weights); },
            graph::Aggregation::kSum, [](Var, Var m) { return ad::relu(m); });
      },
      x);
  const Tensor direct = testing::eval([&](Var v) { return gc(shift, v); }, x);
  CHECK(max_diff(via_mp, direct) < 1e-10);
}

TEST_CASE("message passing with edge features and empty neighborhoods") {
  Rng rng(15);
  graph::SparseGraph g(4, {{0, 1}, {1, 2}}, false);
  g.edge_features = Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor x = random_tensor(rng, {4, 3});
  Index seen_rows = -1, seen_cols = -1;
  const Tensor out = testing::eval(
      [&](Var v) {
        return graph::message_passing(
            g, v,
            [&](const graph::EdgeBatch& e) {
              REQUIRE(e.features);
              seen_rows = e.features->dim(0);
              seen_cols = e.features->dim(1);
              return ad::concat({e.senders, *e.features}, 1);
            },
            graph::Aggregation::kSum, [](Var, Var m) { return m; });
      },
      x);
  CHECK(seen_rows == 2);
  CHECK(seen_cols == 2);
  REQUIRE(out.shape() == Shape{4, 5});
  CHECK(out(0, 3) == 1.0);
  CHECK(out(1, 4) == 4.0);
  for (Index c = 0; c < 5; ++c) {
    CHECK(out(2, c) == 0.0);
    CHECK(out(3, c) == 0.0);
  }
  auto sender = [](const graph::EdgeBatch& e) { return e.senders; };
  for (auto kind : {graph::Aggregation::kMean, graph::Aggregation::kMax})
    CHECK_THROWS_AS(
        testing::eval([&](Var v) { return graph::message_passing(g, v, sender, kind, [](Var, Var m) { return m; }); }, x),
        GraphError);
}

TEST_CASE("block-diagonal batching") {
  Rng rng(16);
  std::vector<graph::SparseGraph> parts;
  for (Index n : {4, 3, 5}) {
    auto g = random_graph(rng, n, 0.5);
    g.features = random_tensor(rng, {n, 3});
    parts.push_back(g);
  }
  const auto batch = graph::batch_graphs(parts);
  CHECK(batch.nodes() == 12);
  CHECK(batch.graphs == 3);
  std::vector<Index> histogram(3, 0);
  for (Index id : batch.graph_id) ++histogram[static_cast<std::size_t>(id)];
  CHECK(histogram == std::vector<Index>{4, 3, 5});
  for (Index e = 0; e < batch.edge_count(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    CHECK(batch.graph_id[static_cast<std::size_t>(batch.rows()[k])] == batch.graph_id[static_cast<std::size_t>(batch.cols()[k])]);
  }

  graph::GraphConv gc(3, 2, rng);
  const Tensor whole = testing::eval([&](Var v) { return gc(batch, v); }, batch.features);
  std::vector<Tensor> pieces;
  for (const auto& g : parts) pieces.push_back(testing::eval([&](Var v) { return gc(g, v); }, g.features));
  CHECK(max_diff(whole, concat(pieces, 0)) == 0.0);

  auto odd = parts.front();
  odd.features = random_tensor(rng, {4, 2});
  CHECK_THROWS_AS(graph::batch_graphs({parts[0], odd}), DimensionError);
}

TEST_CASE("scatter reductions") {
  Rng rng(17);
  const Tensor h = random_tensor(rng, {7, 3});
  const std::vector<Index> ids{0, 0, 0, 0, 1, 1, 1};
  for (auto kind : {graph::Aggregation::kSum, graph::Aggregation::kMean, graph::Aggregation::kMax}) {
    const Tensor y = testing::eval([&](Var v) { return graph::scatter_reduce(v, ids, 2, kind); }, h);
    REQUIRE(y.shape() == Shape{2, 3});
    for (Index b = 0; b < 2; ++b)
      for (Index c = 0; c < 3; ++c) {
        double total = 0.0, top = -1e300;
        int count = 0;
        for (Index r = 0; r < 7; ++r)
          if (ids[static_cast<std::size_t>(r)] == b) {
            total += h(r, c);
            top = std::max(top, h(r, c));
            ++count;
          }
        const double expected = kind == graph::Aggregation::kSum ? total : kind == graph::Aggregation::kMean ? total / count : top;
        CHECK(y(b, c) == doctest::Approx(expected).epsilon(1e-14));
      }
  }
  const Tensor global = testing::eval(
      [&](Var v) { return graph::scatter_reduce(v, std::vector<Index>(7, 0), 1, graph::Aggregation::kSum); }, h);
  CHECK(max_diff(global, sum(h, {0}, true)) < 1e-14);
  CHECK_THROWS_AS(testing::eval([&](Var v) { return graph::scatter_reduce(v, ids, 3, graph::Aggregation::kMax); }, h),
                  GraphError);
  CHECK(testing::eval([&](Var v) { return graph::scatter_reduce(v, ids, 3, graph::Aggregation::kSum); }, h)(2, 1) == 0.0);
}

TEST_CASE("random-walk structural embedding") {
  const Tensor self = graph::return_probabilities(graph::SparseGraph(1, {{0, 0}}), 4);
  for (Index t = 0; t < 4; ++t) CHECK(self(0, t) == 1.0);

  const Tensor cycle = graph::return_probabilities(graph::SparseGraph(2, {{0, 1}}), 5);
  for (Index i = 0; i < 2; ++i)
    for (Index t = 0; t < 5; ++t) CHECK(cycle(i, t) == (t % 2 == 0 ? 0.0 : 1.0));

  Rng rng(18);
  const auto g = random_graph(rng, 5, 0.6, true, true).with_self_loops();
  const Eigen::MatrixXd a = dense(g);
  const Eigen::MatrixXd r = a * Eigen::MatrixXd(a.rowwise().sum().cwiseInverse().asDiagonal());
  const Tensor probs = graph::return_probabilities(g, 4);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(5, 5);
  for (Index t = 0; t < 4; ++t) {
    power = power * r;
    for (Index i = 0; i < 5; ++i) CHECK(probs(i, t) == doctest::Approx(power(i, i)).epsilon(1e-12));
  }

  ad::Parameter w("w", random_tensor(rng, {4, 3}));
  Tape tape;
  const Tensor emb = graph::random_walk_embedding(g, 4, tape.param(w)).value();
  CHECK(max_diff(emb, matmul(probs, w.value())) < 1e-14);

  CHECK_THROWS_AS(graph::return_probabilities(graph::SparseGraph(3, {{0, 1}}), 2), GraphError);
  CHECK_NOTHROW(graph::return_probabilities(graph::SparseGraph(3, {{0, 1}}), 2, true));
}

TEST_CASE("graph heads") {
  Rng rng(19);
  auto g = random_graph(rng, 6, 0.5);
  const Tensor x = random_tensor(rng, {6, 3});
  graph::GraphConv gc(3, 4, rng, nn::Activation::kTanh);
  nn::MLP mlp({4, 5, 2}, rng);
  auto head = [&](const graph::SparseGraph& h, const Tensor& features) {
    Tape tape;
    Var pooled = graph::graph_readout(gc(h, tape.input(features)), std::vector<Index>(6, 0), 1);
    return mlp(pooled).value();
  };
  const auto p = testing::permutation(rng, 6);
  CHECK(max_diff(head(permute(g, p), testing::permute_rows(x, p)), head(g, x)) < 1e-12);

  Tape tape;
  Var hv = tape.input(random_tensor(rng, {6, 4}));
  const Tensor fwd = graph::edge_scores(hv, {{0, 3}, {2, 5}}).value();
  const Tensor bwd = graph::edge_scores(hv, {{3, 0}, {5, 2}}).value();
  CHECK(max_diff(fwd, bwd) == 0.0);
  double dot = 0.0;
  for (Index c = 0; c < 4; ++c) dot += hv.value()(0, c) * hv.value()(3, c);
  CHECK(fwd[0] == doctest::Approx(1.0 / (1.0 + std::exp(-dot))));

  CHECK(graph::task_from_string("edge") == graph::Task::kEdge);
  CHECK_THROWS_AS(graph::task_from_string("hypergraph"), ConfigError);
}

TEST_CASE("semi-supervised loss ignores unlabeled nodes") {
  Rng rng(20);
  const Tensor logits = random_tensor(rng, {5, 3}, -2, 2);
  const std::vector<Index> labels{0, 2, 1, 1, 0};
  const std::vector<bool> mask{true, false, true, false, false};
  Tape tape;
  Var z = tape.input(logits);
  Var loss = graph::masked_cross_entropy(z, labels, mask);
  double expected = 0.0;
  for (Index i : {0, 2}) {
    double lse = 0.0;
    for (Index c = 0; c < 3; ++c) lse += std::exp(logits(i, c));
    expected += std::log(lse) - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  CHECK(loss.value()[0] == doctest::Approx(expected / 2.0).epsilon(1e-13));
  const Tensor g = ad::backward(tape, loss).wrt(z);
  for (Index i : {1, 3, 4})
    for (Index c = 0; c < 3; ++c) CHECK(g(i, c) == 0.0);
  CHECK_THROWS_AS(graph::masked_cross_entropy(z, labels, std::vector<bool>(5, false)), ContractError);
}

TEST_CASE("graph JSON ingestion") {
  const auto data = graph::parse_graph_json(
      R"({"n": 3, "edges": [[0, 1], [1, 2]], "x": [[1, 0], [0, 1], [1, 1]], "y": [0, 1, 0],
          "train_mask": [true, false, true]})");
  CHECK(data.graph.nodes() == 3);
  CHECK(data.graph.edge_count() == 4);
  CHECK(data.graph.features.shape() == Shape{3, 2});
  CHECK(data.labels == std::vector<Index>{0, 1, 0});
  CHECK(data.train_mask == std::vector<bool>{true, false, true});

  auto message_of = [](const std::string& text) {
    try {
      graph::parse_graph_json(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message_of(R"({"edges": []})").rfind("n:", 0) == 0);
  CHECK(message_of(R"({"n": 2, "edges": [[0, 5]]})").rfind("edges[0]:", 0) == 0);
  CHECK(message_of(R"({"n": 2, "edges": [], "x": [[1], [1, 2]]})").rfind("x[1]:", 0) == 0);
  CHECK(message_of(R"({"n": 2, "edges": [], "train_mask": [true, 3]})").rfind("train_mask[1]:", 0) == 0);
  CHECK(message_of("{nope").rfind("<root>:", 0) == 0);
}
