#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "difflab/autodiff/gradcheck.hpp"
#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"
#include "difflab/optim/data.hpp"
#include "difflab/optim/losses.hpp"
#include "difflab/optim/optimizers.hpp"
#include "difflab/optim/stats.hpp"
#include "support.hpp"

using namespace difflab;
using ad::GradientStore;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using testing::max_diff;
using testing::random_tensor;

namespace {

double eval_loss(optim::LossKind kind, const Tensor& pred, const Tensor& target) {
  Tape tape;
  return optim::loss(kind, tape.input(pred), target).value().item();
}

// -log softmax(z)_y computed naively in extended precision.
long double ce_oracle(const Tensor& z, const std::vector<Index>& y) {
  long double total = 0.0L;
  for (Index i = 0; i < z.dim(0); ++i) {
    long double den = 0.0L;
    for (Index j = 0; j < z.dim(1); ++j) den += std::exp(static_cast<long double>(z(i, j)));
    total += -std::log(std::exp(static_cast<long double>(z(i, y[static_cast<std::size_t>(i)]))) / den);
  }
  return total / static_cast<long double>(z.dim(0));
}

GradientStore grads_of(Parameter& p, const Tensor& g) {
  GradientStore store;
  store.accumulate(p.id(), g);
  return store;
}

Tensor scalar_vec(double v) { return Tensor::vector({v}); }

}  // namespace

// ---------------------------------------------------------------------------
// losses

TEST_CASE("mse of a prediction against itself is zero") {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {4, 3});
  CHECK(eval_loss(optim::LossKind::kMse, x, x) == 0.0);
  const Tensor y = Tensor::zeros({4, 3});
  double expected = 0.0;
  for (double v : x.values()) expected += v * v;
  CHECK(eval_loss(optim::LossKind::kMse, x, y) == doctest::Approx(expected / 12.0).epsilon(1e-14));
}

TEST_CASE("cross-entropy of uniform logits over m classes is log m") {
  for (Index m : {2, 5, 17}) {
    const Tensor z = Tensor::full({3, m}, 0.7);
    const Tensor y = Tensor::vector({0, 1, 1});
    CHECK(eval_loss(optim::LossKind::kCrossEntropy, z, y) == doctest::Approx(std::log(double(m))).epsilon(1e-14));
  }
}

TEST_CASE("cross-entropy from logits matches the extended-precision oracle, including +1000 offsets") {
  Rng rng(2);
  for (double offset : {0.0, 1000.0, -1000.0}) {
    Tensor z = random_tensor(rng, {6, 4}, -5.0, 5.0);
    z.array() += offset;
    std::vector<Index> labels;
    for (Index i = 0; i < 6; ++i) labels.push_back(static_cast<Index>(rng.below(4)));
    Tensor y({6});
    for (Index i = 0; i < 6; ++i) y[i] = static_cast<double>(labels[static_cast<std::size_t>(i)]);
    const double got = eval_loss(optim::LossKind::kCrossEntropy, z, y);
    CHECK(std::isfinite(got));
    CHECK(std::abs(got - static_cast<double>(ce_oracle(z, labels))) <= 1e-10);
    CHECK(eval_loss(optim::LossKind::kCrossEntropy, z, optim::one_hot(labels, 4)) == doctest::Approx(got).epsilon(1e-14));
  }
}

TEST_CASE("cross-entropy rejects invalid class indices") {
  const Tensor z = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(eval_loss(optim::LossKind::kCrossEntropy, z, Tensor::vector({0, 3})), DimensionError);
  CHECK_THROWS_AS(eval_loss(optim::LossKind::kCrossEntropy, z, Tensor::vector({-1, 0})), DimensionError);
  CHECK_THROWS_AS(eval_loss(optim::LossKind::kCrossEntropy, z, Tensor::vector({0.5, 0})), DimensionError);
  CHECK_THROWS_AS(optim::one_hot({4}, 4), DimensionError);
}

TEST_CASE("huber is quadratic inside the unit band and linear outside") {
  auto h = [](double e) { return eval_loss(optim::LossKind::kHuber, scalar_vec(e), scalar_vec(0.0)); };
  CHECK(h(0.5) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(h(-0.5) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(h(1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(h(3.0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(h(-3.0) == doctest::Approx(2.5).epsilon(1e-15));
  Parameter p("p", Tensor::vector({0.3, -0.6, 2.5, -4.0}));
  const Tensor target = Tensor::zeros({4});
  CHECK(ad::grad_check([&](Tape& t) { return optim::huber(t.param(p), target); }, {&p}).pass);
  Tape tape;
  const auto g = ad::backward(tape, optim::huber(tape.param(p), target))[p];
  CHECK(g[2] == doctest::Approx(0.25));
  CHECK(g[3] == doctest::Approx(-0.25));
}

TEST_CASE("hinge applies to signed targets") {
  const Tensor pred = Tensor::vector({2.0, 0.5, -0.5, 0.0});
  const Tensor y = Tensor::vector({1, 1, 1, -1});
  CHECK(eval_loss(optim::LossKind::kHinge, pred, y) == doctest::Approx((0.0 + 0.5 + 1.5 + 1.0) / 4.0));
  CHECK_THROWS_AS(eval_loss(optim::LossKind::kHinge, pred, Tensor::vector({1, 0, 1, 1})), DomainError);
  CHECK(max_diff(optim::to_signed(Tensor::vector({0, 1, 1})), Tensor::vector({-1, 1, 1})) == 0.0);
}

TEST_CASE("binary cross-entropy from logits matches log(1 + e^z) - y z") {
  Rng rng(3);
  const Tensor z = random_tensor(rng, {10}, -30.0, 30.0);
  Tensor y({10});
  for (Index i = 0; i < 10; ++i) y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  long double expected = 0.0L;
  for (Index i = 0; i < 10; ++i) {
    const long double zi = z[i];
    expected += std::log1p(std::exp(zi)) - static_cast<long double>(y[i]) * zi;
  }
  CHECK(std::abs(eval_loss(optim::LossKind::kBinaryCrossEntropy, z, y) - static_cast<double>(expected / 10.0L)) <= 1e-12);
}

TEST_CASE("brier score of probability rows") {
  const Tensor p({2, 3}, {0.7, 0.2, 0.1, 0.1, 0.1, 0.8});
  const double expected = ((0.3 * 0.3 + 0.04 + 0.01) + (0.01 + 0.81 + 0.64)) / 2.0;
  CHECK(eval_loss(optim::LossKind::kBrier, p, Tensor::vector({0, 1})) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("logistic regression gradient equals (f(x) - y) x") {
  Rng rng(4);
  const Index n = 7, d = 3;
  const Tensor x = random_tensor(rng, {n, d});
  Tensor y({n, 1});
  for (Index i = 0; i < n; ++i) y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Parameter w("w", random_tensor(rng, {d, 1}));
  Tape tape;
  Var logits = ad::matmul(tape.constant(x), tape.param(w));
  const Tensor g = ad::backward(tape, optim::binary_cross_entropy(logits, y))[w];
  Tensor expected({d, 1});
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < d; ++j) s += x(i, j) * w.value()(j, 0);
    const double f = 1.0 / (1.0 + std::exp(-s));
    for (Index j = 0; j < d; ++j) expected(j, 0) += (f - y[i]) * x(i, j) / static_cast<double>(n);
  }
  CHECK(max_diff(g, expected) <= 1e-10);
}

TEST_CASE("loss gradients pass the finite-difference check") {
  Rng rng(5);
  Parameter z("z", random_tensor(rng, {4, 3}, -2.0, 2.0));
  const Tensor idx = Tensor::vector({0, 2, 1, 2});
  const Tensor soft({4, 3}, {0.2, 0.3, 0.5, 1, 0, 0, 0.1, 0.1, 0.8, 0.4, 0.4, 0.2});
  const Tensor pm = optim::to_signed(Tensor({4, 3}, {0, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 0}));
  const Tensor t01({4, 3}, {0, 1, 1, 0, 0, 1, 1, 1, 0, 1, 0, 0});
  CHECK(ad::grad_check([&](Tape& t) { return optim::cross_entropy(t.param(z), idx); }, {&z}).pass);
  CHECK(ad::grad_check([&](Tape& t) { return optim::cross_entropy(t.param(z), soft); }, {&z}).pass);
  CHECK(ad::grad_check([&](Tape& t) { return optim::binary_cross_entropy(t.param(z), t01); }, {&z}).pass);
  CHECK(ad::grad_check([&](Tape& t) { return optim::mse(t.param(z), soft); }, {&z}).pass);
  CHECK(ad::grad_check([&](Tape& t) { return optim::brier(ad::softmax(t.param(z)), idx); }, {&z}).pass);
  Parameter h("h", Tensor({4, 3}, {0.3, 1.6, -0.2, 0.7, -0.4, 2.0, -1.5, 0.1, 0.5, 0.9, -0.8, 3.0}));
  CHECK(ad::grad_check([&](Tape& t) { return optim::hinge(t.param(h), pm); }, {&h}).pass);
}

TEST_CASE("loss names round-trip") {
  for (auto k : {optim::LossKind::kMse, optim::LossKind::kHuber, optim::LossKind::kHinge, optim::LossKind::kCrossEntropy,
                 optim::LossKind::kBinaryCrossEntropy, optim::LossKind::kBrier})
    CHECK(optim::loss_from_string(optim::to_string(k)) == k);
  CHECK_THROWS_AS(optim::loss_from_string("focal"), ConfigError);
}

// ---------------------------------------------------------------------------
// optimizers

TEST_CASE("gradient descent on x^2 - 1.5x converges to 0.75") {
  Parameter x("x", scalar_vec(0.0));
  optim::SGD sgd(0.1);
  for (int t = 0; t < 200; ++t) {
    Tape tape;
    Var v = tape.param(x);
    Var f = ad::sum(ad::square(v) - ad::scale(v, 1.5));
    sgd.step({&x}, ad::backward(tape, f));
  }
  CHECK(x.value()[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(sgd.steps() == 200);
}

TEST_CASE("momentum zero is bitwise plain gradient descent") {
  Rng rng(6);
  Parameter a("a", random_tensor(rng, {5}));
  Tensor plain = a.value();
  optim::SGD sgd(0.037, 0.0);
  for (int t = 0; t < 20; ++t) {
    const Tensor g = random_tensor(rng, {5});
    sgd.step({&a}, grads_of(a, g));
    for (Index i = 0; i < 5; ++i) plain[i] = plain[i] - 0.037 * g[i];
  }
  for (Index i = 0; i < 5; ++i) CHECK(a.value()[i] == plain[i]);
}

TEST_CASE("momentum unroll damps the step from t-2 by lambda squared") {
  const double eta = 0.1, lambda = 0.9;
  Parameter a("a", scalar_vec(1.0));
  optim::SGD sgd(eta, lambda);
  const double g1 = 0.5, g2 = -0.2, g3 = 0.3;
  for (double g : {g1, g2, g3}) sgd.step({&a}, grads_of(a, scalar_vec(g)));
  const double buffer = -eta * g3 - lambda * eta * g2 - lambda * lambda * eta * g1;
  CHECK(sgd.buffer(a)[0] == doctest::Approx(buffer).epsilon(1e-15));
  const double x = 1.0 - eta * g1 + (-eta * g2 - lambda * eta * g1) + buffer;
  CHECK(a.value()[0] == doctest::Approx(x).epsilon(1e-15));
}

TEST_CASE("optimizers reject bad hyper-parameters and shape mismatches") {
  CHECK_THROWS_AS(optim::SGD(0.0), DomainError);
  CHECK_THROWS_AS(optim::Adam({.lr = 1e-3, .beta1 = 1.0}), DomainError);
  Parameter a("a", Tensor::zeros({3}));
  optim::SGD sgd(0.1);
  CHECK_THROWS_AS(sgd.step({&a}, grads_of(a, Tensor::zeros({2}))), DimensionError);
}

TEST_CASE("adam with zero gradients leaves parameters alone, adamw only shrinks them") {
  Parameter a("a", Tensor::vector({1.0, -2.0}));
  optim::Adam adam;
  adam.step({&a}, grads_of(a, Tensor::zeros({2})));
  CHECK(a.value()[0] == 1.0);
  CHECK(a.value()[1] == -2.0);
  Parameter b("b", Tensor::vector({1.0, -2.0}));
  optim::Adam adamw({.lr = 0.1, .weight_decay = 0.5, .decoupled = true});
  adamw.step({&b}, grads_of(b, Tensor::zeros({2})));
  CHECK(b.value()[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(b.value()[1] == doctest::Approx(-1.9).epsilon(1e-15));
}

TEST_CASE("adam with a constant gradient steps by the learning rate") {
  Parameter a("a", Tensor::vector({0.0, 0.0}));
  optim::Adam adam({.lr = 0.01});
  const Tensor g = Tensor::vector({3.0, -0.02});
  Tensor prev = a.value();
  for (int t = 0; t < 50; ++t) {
    adam.step({&a}, grads_of(a, g));
    CHECK(prev[0] - a.value()[0] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(a.value()[1] - prev[1] == doctest::Approx(0.01).epsilon(1e-5));
    prev = a.value();
  }
}

TEST_CASE("adamw differs from adam with an l2 penalty on a one-parameter problem") {
  // f(x) = (x - 1)^2 / 2, x0 = 2, two steps, hand unrolled.
  const double lr = 0.1, wd = 0.3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto run = [&](bool decoupled) {
    Parameter x("x", scalar_vec(2.0));
    optim::Adam opt({.lr = lr, .weight_decay = wd, .decoupled = decoupled});
    for (int t = 0; t < 2; ++t) opt.step({&x}, grads_of(x, scalar_vec(x.value()[0] - 1.0)));
    return x.value()[0];
  };
  auto oracle = [&](bool decoupled) {
    double x = 2.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
      double g = x - 1.0;
      if (!decoupled) g += 2.0 * wd * x;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      const double decay = decoupled ? lr * wd * x : 0.0;
      x = x - lr * mh / (std::sqrt(vh) + eps) - decay;
    }
    return x;
  };
  const double adam_l2 = run(false), adamw = run(true);
  CHECK(adam_l2 == doctest::Approx(oracle(false)).epsilon(1e-14));
  CHECK(adamw == doctest::Approx(oracle(true)).epsilon(1e-14));
  CHECK(std::abs(adam_l2 - adamw) > 1e-3);
}

TEST_CASE("optimizers build from json") {
  auto sgd = optim::make_optimizer({{"name", "sgd"}, {"lr", 0.5}, {"momentum", 0.9}});
  CHECK(sgd->learning_rate() == 0.5);
  auto adamw = optim::make_optimizer({{"name", "adamw"}, {"weight_decay", 0.01}});
  CHECK(adamw->learning_rate() == 1e-3);
  CHECK_THROWS_AS(optim::make_optimizer({{"name", "rmsprop"}}), ConfigError);
  CHECK_THROWS_AS(optim::make_optimizer({{"name", "sgd"}, {"lr", "fast"}}), ConfigError);
}

// ---------------------------------------------------------------------------
// regularization and clipping

TEST_CASE("l2 penalty gradient is 2w and l1 uses subgradient 0 at 0") {
  Parameter w("w", Tensor::vector({0.5, -1.5, 0.0, 2.0}));
  {
    Tape tape;
    Var r = optim::l2_penalty(tape, {&w});
    CHECK(r.value().item() == doctest::Approx(0.25 + 2.25 + 4.0));
    CHECK(max_diff(ad::backward(tape, r)[w], Tensor::vector({1.0, -3.0, 0.0, 4.0})) == 0.0);
  }
  Tape tape;
  Var r = optim::l1_penalty(tape, {&w});
  CHECK(r.value().item() == doctest::Approx(4.0));
  CHECK(max_diff(ad::backward(tape, r)[w], Tensor::vector({1.0, -1.0, 0.0, 1.0})) == 0.0);
}

TEST_CASE("spred keeps w = a * b and bounds the l1 norm from above") {
  Rng rng(7);
  const Tensor w = random_tensor(rng, {6}, -2.0, 2.0);
  optim::SpredWeight s("w", w);
  CHECK(max_diff(s.value(), w) <= 1e-15);
  double l1 = 0.0;
  for (double v : w.values()) l1 += std::abs(v);
  Tape tape;
  CHECK(s.penalty(tape).value().item() == doctest::Approx(2.0 * l1).epsilon(1e-14));
  CHECK(max_diff(s.weight(tape).value(), w) <= 1e-15);
  auto params = s.parameters();
  for (int trial = 0; trial < 20; ++trial) {
    const double c = rng.uniform(0.2, 5.0);
    params[0]->value().array() *= c;
    params[1]->value().array() /= c;
    Tape t2;
    CHECK(max_diff(s.value(), w) <= 1e-12);
    CHECK(s.penalty(t2).value().item() >= 2.0 * l1 - 1e-12);
  }
}

TEST_CASE("spred recovers the l1 soft-threshold zero on a scalar problem") {
  // min 0.5 (w - 0.1)^2 + 0.2 |w| has its minimum at w = 0.
  optim::SpredWeight s("w", scalar_vec(1.0));
  auto params = s.parameters();
  optim::SGD sgd(0.1);
  for (int t = 0; t < 3000; ++t) {
    Tape tape;
    Var w = s.weight(tape);
    Var f = ad::sum(0.5 * ad::square(w - 0.1)) + 0.1 * s.penalty(tape);
    sgd.step(params, ad::backward(tape, f));
  }
  CHECK(std::abs(s.value()[0]) < 1e-6);
}

TEST_CASE("gradient clipping by global norm") {
  Parameter a("a", Tensor::zeros({2})), b("b", Tensor::zeros({1}));
  auto store = [&](double x, double y, double z) {
    GradientStore g;
    g.accumulate(a.id(), Tensor::vector({x, y}));
    g.accumulate(b.id(), Tensor::vector({z}));
    return g;
  };
  GradientStore small = store(0.1, 0.2, 0.2);
  CHECK(optim::clip_grad_norm(small, 1.0) == doctest::Approx(0.3));
  CHECK(small[a][0] == 0.1);
  GradientStore big = store(6.0, 0.0, 8.0);
  CHECK(optim::clip_grad_norm(big, 1.0) == doctest::Approx(10.0));
  CHECK(big[a][0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(big[b][0] == doctest::Approx(0.8).epsilon(1e-15));
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    GradientStore g = store(rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 3));
    const Tensor before = g[a];
    const double cap = rng.uniform(0.1, 5.0);
    const double norm = optim::clip_grad_norm(g, cap);
    CHECK(std::abs(g.global_norm() - std::min(norm, cap)) <= 1e-12);
    CHECK(std::abs(g[a][0] * before[1] - g[a][1] * before[0]) <= 1e-12);
  }
  CHECK_THROWS_AS(optim::clip_grad_norm(big, 0.0), DomainError);
}

// ---------------------------------------------------------------------------
// mini-batches

TEST_CASE("1000 examples in batches of 20 for 5 epochs is 250 iterations") {
  optim::Dataset data{Tensor::zeros({1000, 2}), Tensor::zeros({1000})};
  optim::MinibatchIterator it(data, 20, 1);
  CHECK(it.batches_per_epoch() == 50);
  Index iterations = 0;
  while (true) {
    it.next();
    ++iterations;
    if (iterations == 250) break;
  }
  CHECK(it.epoch() == 4);
  it.next();
  CHECK(it.epoch() == 5);
}

TEST_CASE("each epoch visits every example exactly once and reshuffles") {
  Tensor x({10, 2});
  for (Index i = 0; i < 20; ++i) x[i] = static_cast<double>(i);
  optim::Dataset data{x, Tensor::vector({0, 1, 2, 3, 4, 5, 6, 7, 8, 9})};
  optim::MinibatchIterator it(data, 3, 9);
  std::vector<std::vector<Index>> orders;
  for (int e = 0; e < 3; ++e) {
    auto batches = it.epoch_indices();
    REQUIRE(batches.size() == 4);
    CHECK(batches.back().size() == 1);
    std::vector<Index> all;
    for (auto& b : batches) all.insert(all.end(), b.begin(), b.end());
    orders.push_back(all);
    std::sort(all.begin(), all.end());
    for (Index i = 0; i < 10; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  }
  CHECK((orders[0] != orders[1] || orders[1] != orders[2]));
  optim::MinibatchIterator again(data, 3, 9);
  auto b = again.next();
  CHECK(b.indices == std::vector<Index>(orders[0].begin(), orders[0].begin() + 3));
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(b.targets[static_cast<Index>(r)] == static_cast<double>(b.indices[r]));
    CHECK(b.inputs(static_cast<Index>(r), 1) == static_cast<double>(2 * b.indices[r] + 1));
  }
}

TEST_CASE("mini-batch size must be in 1..n and the dataset consistent") {
  optim::Dataset data{Tensor::zeros({5, 2}), Tensor::zeros({5})};
  CHECK_THROWS_AS(optim::MinibatchIterator(data, 0, 1), ContractError);
  CHECK_THROWS_AS(optim::MinibatchIterator(data, 6, 1), ContractError);
  optim::Dataset bad{Tensor::zeros({5, 2}), Tensor::zeros({4})};
  CHECK_THROWS_AS(optim::MinibatchIterator(bad, 2, 1), DimensionError);
}

// ---------------------------------------------------------------------------
// early stopping

TEST_CASE("early stopping never stops on a strictly improving history") {
  optim::EarlyStopping es(3);
  for (int t = 0; t < 50; ++t) CHECK_FALSE(es.update(0.01 * t));
  CHECK_FALSE(es.rollback_epoch().has_value());
}

TEST_CASE("a flat history of length k + 1 stops") {
  for (Index k : {1, 2, 5}) {
    optim::EarlyStopping es(k);
    for (Index t = 0; t < k; ++t) CHECK_FALSE(es.update(0.5));
    CHECK(es.update(0.5));
    CHECK(es.rollback_epoch() == 1);
  }
}

TEST_CASE("early stopping fires exactly when the window condition first holds") {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.below(4));
    std::vector<double> a;
    for (int t = 0; t < 30; ++t) a.push_back(std::round(rng.uniform(0, 1) * 8.0 + 0.05 * t));
    Index expected = -1;
    for (Index t = k + 1; t <= 30 && expected < 0; ++t) {
      bool all = true;
      for (Index i = t - k; i <= t - 1; ++i) all = all && a[static_cast<std::size_t>(t - 1)] <= a[static_cast<std::size_t>(i - 1)];
      if (all) expected = t;
    }
    optim::EarlyStopping es(k);
    Index stopped_at = -1;
    for (Index t = 1; t <= 30; ++t)
      if (es.update(a[static_cast<std::size_t>(t - 1)])) {
        stopped_at = t;
        break;
      }
    CHECK(stopped_at == expected);
    if (expected > 0) CHECK(es.rollback_epoch() == expected - k);
  }
}

// ---------------------------------------------------------------------------
// augmentation

TEST_CASE("mixup interpolates inputs and one-hot targets") {
  const Tensor x1 = Tensor::vector({1, 2, 3}), x2 = Tensor::vector({-1, 0, 5});
  const Tensor y1 = Tensor::vector({1, 0}), y2 = Tensor::vector({0, 1});
  auto same = optim::mixup(x1, y1, x2, y2, 1.0);
  CHECK(max_diff(same.inputs, x1) == 0.0);
  CHECK(max_diff(same.targets, y1) == 0.0);
  auto half = optim::mixup(x1, y1, x2, y2, 0.5);
  CHECK(max_diff(half.targets, Tensor::vector({0.5, 0.5})) == 0.0);
  CHECK(max_diff(half.inputs, Tensor::vector({0, 1, 4})) == 0.0);
  CHECK_THROWS_AS(optim::mixup(x1, y1, Tensor::vector({1, 2}), y2, 0.5), DimensionError);
}

TEST_CASE("mixup over a batch draws lambda in [0, 1] and mixes with a batch partner") {
  Rng rng(11);
  const Tensor x = random_tensor(rng, {6, 3});
  const Tensor y = optim::one_hot({0, 1, 2, 0, 1, 2}, 3);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = optim::mixup_batch(x, y, rng);
    CHECK(m.lambda >= 0.0);
    CHECK(m.lambda <= 1.0);
    for (Index i = 0; i < 6; ++i) {
      double row = 0.0;
      for (Index j = 0; j < 3; ++j) row += m.targets(i, j);
      CHECK(row == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("cutmix mask covers patch area over image area and composites pixels") {
  Rng rng(12);
  const Index h = 8, w = 6, c = 3;
  const Tensor mask = optim::patch_mask(h, w, 2, 1, 3, 4);
  double ones = 0.0;
  for (double v : mask.values()) ones += v;
  CHECK(ones / static_cast<double>(h * w) == doctest::Approx(12.0 / 48.0));
  const Tensor x1 = random_tensor(rng, {h, w, c}), x2 = random_tensor(rng, {h, w, c});
  auto m = optim::cutmix(x1, Tensor::vector({1, 0}), x2, Tensor::vector({0, 1}), mask, 0.3);
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      for (Index k = 0; k < c; ++k) CHECK(m.inputs(i, j, k) == (mask(i, j) == 1.0 ? x1(i, j, k) : x2(i, j, k)));
  CHECK(max_diff(m.targets, Tensor::vector({0.3, 0.7})) <= 1e-15);
  const Tensor xb = random_tensor(rng, {4, h, w, c});
  auto b = optim::cutmix_batch(xb, optim::one_hot({0, 1, 0, 1}, 2), 4, 2, rng);
  double budget = 0.0;
  for (double v : b.mask.values()) budget += v;
  CHECK(budget == 8.0);
  CHECK_THROWS_AS(optim::patch_mask(4, 4, 2, 0, 3, 1), DimensionError);
}

TEST_CASE("gaussian noise has the requested spread") {
  Rng rng(13);
  const Tensor x = Tensor::full({20000}, 2.0);
  const Tensor y = optim::gaussian_noise(x, 0.5, rng);
  double mean = 0.0, var = 0.0;
  for (double v : y.values()) mean += v;
  mean /= 20000.0;
  for (double v : y.values()) var += (v - mean) * (v - mean);
  var /= 20000.0;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.01));
  CHECK(std::sqrt(var) == doctest::Approx(0.5).epsilon(0.02));
}

// ---------------------------------------------------------------------------
// calibration and conformal prediction

TEST_CASE("an always-correct classifier at confidence 0.8 has ECE 0.2") {
  const std::vector<double> conf(100, 0.8);
  const std::vector<bool> correct(100, true);
  auto r = optim::calibration(conf, correct);
  CHECK(r.ece == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(r.bins.size() == 10);
  CHECK(r.bins[8].count == 100);
}

TEST_CASE("a sharp and accurate classifier has ECE 0") {
  auto r = optim::calibration(std::vector<double>(10, 1.0), std::vector<bool>(10, true));
  CHECK(r.ece == 0.0);
  CHECK(r.bins[9].count == 10);
}

TEST_CASE("perfectly calibrated synthetic data has near-zero ECE and counts sum to n") {
  Rng rng(14);
  std::vector<double> conf;
  std::vector<bool> correct;
  for (int i = 0; i < 200000; ++i) {
    const double c = rng.uniform();
    conf.push_back(c);
    correct.push_back(rng.bernoulli(c));
  }
  auto r = optim::calibration(conf, correct, 10);
  Index total = 0;
  for (auto& b : r.bins) total += b.count;
  CHECK(total == 200000);
  CHECK(r.ece < 0.01);
  CHECK_THROWS_AS(optim::calibration({1.2}, {true}), DomainError);
}

TEST_CASE("empty bins contribute nothing and edges go to the upper bin") {
  auto r = optim::calibration({0.1, 0.1, 0.95}, {true, false, true}, 10);
  CHECK(r.bins[1].count == 2);
  CHECK(r.bins[0].count == 0);
  CHECK(r.bins[9].count == 1);
  CHECK(r.ece == doctest::Approx((2.0 * 0.4 + 0.05) / 3.0).epsilon(1e-14));
}

TEST_CASE("conformal threshold agrees with a brute-force sweep and reaches coverage") {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 20 + static_cast<Index>(rng.below(50)), m = 4;
    Tensor s = random_tensor(rng, {n, m}, -1.0, 2.0);
    for (Index i = 0; i < n; ++i) {
      Eigen::Map<Eigen::RowVectorXd> row(s.data() + i * m, m);
      row = (row.array().exp() / row.array().exp().sum()).matrix();
    }
    std::vector<Index> y;
    for (Index i = 0; i < n; ++i) y.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(m))));
    const double alpha = 0.1;
    std::vector<double> candidates{0.0};
    for (Index i = 0; i < n; ++i) candidates.push_back(s(i, y[static_cast<std::size_t>(i)]));
    double sweep = 0.0;
    for (double g : candidates) {
      Index hit = 0;
      for (Index i = 0; i < n; ++i) hit += s(i, y[static_cast<std::size_t>(i)]) > g ? 1 : 0;
      if (static_cast<double>(hit) >= (1.0 - alpha) * static_cast<double>(n) - 1e-12) sweep = std::max(sweep, g);
    }
    const double gamma = optim::conformal_threshold(s, y, alpha);
    CHECK(gamma == sweep);
    CHECK(optim::coverage(s, y, gamma) >= 1.0 - alpha);
    double next = 2.0;
    for (double c : candidates)
      if (c > gamma) next = std::min(next, c);
    if (next < 2.0) CHECK(optim::coverage(s, y, next) < 1.0 - alpha);
  }
}

TEST_CASE("conformal threshold at alpha 1 is the maximum score") {
  const Tensor s({3, 2}, {0.9, 0.1, 0.3, 0.7, 0.6, 0.4});
  CHECK(optim::conformal_threshold(s, {0, 1, 0}, 1.0) == 0.9);
  CHECK(optim::prediction_set(Tensor::vector({0.9, 0.1}), 0.9).empty());
  CHECK(optim::prediction_set(Tensor::vector({0.5, 0.3, 0.2}), 0.25) == std::vector<Index>{0, 1});
  CHECK(optim::conformal_threshold(s, {0, 1, 0}, 0.05) == 0.0);
  CHECK_THROWS_AS(optim::conformal_threshold(s, {0, 1, 0}, 0.0), DomainError);
}

// ---------------------------------------------------------------------------
// estimators

TEST_CASE("maximum likelihood estimators") {
  CHECK(optim::fit_bernoulli({1, 1, 1}) == 1.0);
  CHECK(optim::fit_bernoulli({1, 0, 0, 1}) == 0.5);
  const auto g = optim::fit_gaussian({0.0, 2.0});
  CHECK(g.mean == 1.0);
  CHECK(g.variance == 1.0);
  CHECK(optim::fit_gaussian({0.0, 2.0}, true).variance == 2.0);
  CHECK_THROWS_AS(optim::fit_bernoulli({}), ContractError);
  CHECK_THROWS_AS(optim::fit_gaussian({1.0}, true), ContractError);
  CHECK_THROWS_AS(optim::fit_bernoulli({0.5}), DomainError);
}

TEST_CASE("least squares recovers noiseless weights and the residual variance is the Gaussian MLE") {
  Rng rng(16);
  const Tensor x = random_tensor(rng, {12, 3});
  const Tensor w = Tensor::vector({0.5, -1.25, 2.0});
  Tensor y({12});
  Eigen::Map<Eigen::VectorXd>(y.data(), 12) = x.matrix() * Eigen::Map<const Eigen::VectorXd>(w.data(), 3);
  CHECK(max_diff(optim::least_squares(x, y), w) <= 1e-8);

  Tensor xi = random_tensor(rng, {30, 3});
  for (Index i = 0; i < 30; ++i) xi(i, 0) = 1.0;
  const Tensor yn = random_tensor(rng, {30});
  const Tensor wn = optim::least_squares(xi, yn);
  std::vector<double> residuals;
  double ms = 0.0;
  for (Index i = 0; i < 30; ++i) {
    double r = yn[i];
    for (Index j = 0; j < 3; ++j) r -= xi(i, j) * wn[j];
    residuals.push_back(r);
    ms += r * r / 30.0;
  }
  CHECK(optim::fit_gaussian(residuals).variance == doctest::Approx(ms).epsilon(1e-10));
}

TEST_CASE("collinear columns without regularization raise a conditioning error") {
  Tensor x({5, 2});
  for (Index i = 0; i < 5; ++i) {
    x(i, 0) = static_cast<double>(i);
    x(i, 1) = 2.0 * static_cast<double>(i);
  }
  const Tensor y = Tensor::vector({1, 2, 3, 4, 5});
  try {
    optim::least_squares(x, y);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("lambda > 0") != std::string::npos);
  }
  CHECK_NOTHROW(optim::least_squares(x, y, 0.1));
}

TEST_CASE("gradient descent matches the closed form and decreases monotonically") {
  Rng rng(17);
  const Tensor x = random_tensor(rng, {5, 3});
  const Tensor y = random_tensor(rng, {5});
  for (double lambda : {0.0, 0.5}) {
    const Tensor closed = optim::least_squares(x, y, lambda);
    const auto gd = optim::least_squares_gd(x, y, lambda, 20000);
    CHECK(max_diff(gd.w, closed) <= (lambda > 0 ? 1e-5 : 1e-4));
    for (std::size_t t = 1; t < gd.losses.size(); ++t) CHECK(gd.losses[t] <= gd.losses[t - 1] + 1e-12);
    Eigen::MatrixXd a = x.matrix().transpose() * x.matrix();
    a.diagonal().array() += lambda;
    const Eigen::VectorXd oracle = a.inverse() * (x.matrix().transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), 5));
    for (Index j = 0; j < 3; ++j) CHECK(closed[j] == doctest::Approx(oracle[j]).epsilon(1e-9));
  }
}
