#include "difflab/harness/tasks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"
#include "difflab/graph/graph.hpp"
#include "difflab/harness/ua.hpp"
#include "difflab/nn/layers.hpp"
#include "difflab/optim/data.hpp"
#include "difflab/optim/losses.hpp"
#include "difflab/optim/optimizers.hpp"
#include "difflab/optim/stats.hpp"

namespace difflab::harness {

namespace fs = std::filesystem;
using ad::Parameter;
using ad::Tape;
using ad::Var;

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "epoch,step,loss,val_metric,lr,grad_norm\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.epoch),
                  static_cast<long long>(r.step), r.loss, r.val_metric, r.lr, r.grad_norm);
    out += buf;
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("output: cannot write " + path.string());
  out << text;
}

std::unique_ptr<optim::Optimizer> optimizer_for(const ExperimentConfig& config, nlohmann::json defaults) {
  for (const auto& [key, value] : config.optimizer.items()) defaults[key] = value;
  return optim::make_optimizer(defaults);
}

// Concatenates parameter groups, prefixing names so checkpoints stay unambiguous.
std::vector<Parameter*> collect(std::initializer_list<std::pair<std::string, std::vector<Parameter*>>> groups) {
  std::vector<Parameter*> out;
  for (const auto& [prefix, params] : groups)
    for (Parameter* p : params) {
      p->set_name(prefix + "." + p->name());
      out.push_back(p);
    }
  return out;
}

Index row_argmax(const Tensor& logits, Index row) {
  const Index m = logits.dim(1);
  Index best = 0;
  for (Index j = 1; j < m; ++j)
    if (logits(row, j) > logits(row, best)) best = j;
  return best;
}

std::string reliability_csv(const optim::CalibrationReport& report) {
  std::string out = "bin,lower,upper,count,confidence,accuracy\n";
  char buf[256];
  const auto b = static_cast<double>(report.bins.size());
  for (std::size_t i = 0; i < report.bins.size(); ++i) {
    const auto& bin = report.bins[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%lld,%.17g,%.17g\n", i, static_cast<double>(i) / b,
                  static_cast<double>(i + 1) / b, static_cast<long long>(bin.count), bin.confidence, bin.accuracy);
    out += buf;
  }
  return out;
}

// Max-softmax confidence and correctness for the selected rows.
optim::CalibrationReport calibrate(const Tensor& logits, const std::vector<Index>& labels,
                                   const std::vector<Index>& rows) {
  const Tensor p = softmax(logits);
  std::vector<double> conf;
  std::vector<bool> correct;
  for (Index i : rows) {
    const Index pick = row_argmax(logits, i);
    conf.push_back(std::min(1.0, p(i, pick)));
    correct.push_back(pick == labels[static_cast<std::size_t>(i)]);
  }
  return optim::calibration(conf, correct);
}

nlohmann::json calibration_json(const optim::CalibrationReport& r) {
  Index occupied = 0;
  for (const auto& b : r.bins) occupied += b.count > 0 ? 1 : 0;
  return {{"ece", r.ece}, {"occupied_bins", occupied}};
}

struct Artifacts {
  std::vector<std::pair<std::string, std::string>> files;
  std::function<void(const fs::path&)> checkpoint;
};

// ---------------------------------------------------------------------------
// xor

const Tensor& xor_inputs() {
  static const Tensor x({4, 2}, {0, 0, 0, 1, 1, 0, 1, 1});
  return x;
}
const Tensor& xor_targets() {
  static const Tensor y({4, 1}, {0, 1, 1, 0});
  return y;
}

XorOutcome xor_loop(Index hidden, std::uint64_t seed, Index steps, std::unique_ptr<optim::Optimizer> opt,
                    Index log_every, std::vector<MetricRow>* rows, Artifacts* artifacts = nullptr) {
  Rng init = Rng(seed).split("init");
  std::shared_ptr<nn::Linear> linear;
  std::shared_ptr<nn::MLP> mlp;
  std::vector<Parameter*> params;
  if (hidden == 0) {
    linear = std::make_shared<nn::Linear>(2, 1, init);
    params = linear->parameters();
  } else {
    mlp = std::make_shared<nn::MLP>(std::vector<Index>{2, hidden, 1}, init, nn::Activation::kRelu);
    params = mlp->parameters();
  }
  if (artifacts)
    artifacts->checkpoint = [linear, mlp, params](const fs::path& dir) {
      nn::save_checkpoint(dir, mlp ? mlp->spec() : nlohmann::json{{"kind", "linear"}, {"in", 2}, {"out", 1}}, params);
    };
  auto forward = [&](Tape& tape) {
    Var x = tape.constant(xor_inputs());
    return linear ? (*linear)(x) : (*mlp)(x);
  };
  auto accuracy = [&](const Tensor& logits) {
    double hits = 0.0;
    for (Index i = 0; i < 4; ++i) hits += ((logits[i] > 0.0) == (xor_targets()[i] > 0.5)) ? 1.0 : 0.0;
    return hits / 4.0;
  };
  XorOutcome out;
  for (Index step = 0; step <= steps; ++step) {
    Tape tape;
    Var logits = forward(tape);
    Var loss = optim::binary_cross_entropy(logits, xor_targets());
    const double acc = accuracy(logits.value());
    out.accuracy = acc;
    out.final_loss = loss.value().item();
    if (acc == 1.0 && out.steps_to_perfect < 0) out.steps_to_perfect = step;
    if (step == steps) break;
    auto grads = ad::backward(tape, loss);
    if (rows && step % log_every == 0)
      rows->push_back({step, step, out.final_loss, acc, opt->learning_rate(), grads.global_norm()});
    opt->step(params, grads);
  }
  return out;
}

RunResult run_xor(const ExperimentConfig& c, Artifacts& artifacts) {
  Block model(c.model, "model"), schedule(c.schedule, "schedule");
  const std::string kind = model.text("kind", "mlp");
  if (kind != "linear" && kind != "mlp") throw ConfigError("model.kind: expected 'linear' or 'mlp'");
  const Index hidden = kind == "linear" ? 0 : model.integer("hidden", 8, 1);
  const Index steps = schedule.integer("steps", 2000, 1);
  const Index log_every = schedule.integer("log_every", 50, 1);
  RunResult r;
  const auto outcome = xor_loop(hidden, c.seed, steps, optimizer_for(c, {{"name", "adam"}, {"lr", 0.05}}),
                                log_every, &r.metrics, &artifacts);
  r.evaluation = {{"accuracy", outcome.accuracy},
                  {"steps_to_perfect", outcome.steps_to_perfect},
                  {"final_loss", outcome.final_loss},
                  {"model", kind}};
  return r;
}

// ---------------------------------------------------------------------------
// regression

RunResult run_regression(const ExperimentConfig& c, Artifacts& artifacts) {
  Block data(c.data, "data"), schedule(c.schedule, "schedule");
  const Index n = data.integer("n", 200, 1), d = data.integer("d", 3, 1);
  const double noise = data.number("noise", 0.1);
  const Index epochs = schedule.integer("epochs", 100, 1);
  const Index batch = schedule.integer("batch_size", 20, 1);
  if (batch > n) throw ConfigError("schedule.batch_size: exceeds data.n");

  Rng root(c.seed);
  Rng gen = root.split("data"), init = root.split("init");
  optim::Dataset ds{gen.uniform_tensor({n, d}, -1.0, 1.0), Tensor({n, 1})};
  const Tensor w_true = gen.normal_tensor({d}, 0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < d; ++j) s += ds.inputs(i, j) * w_true[j];
    ds.targets[i] = s + noise * gen.normal();
  }
  nn::Linear model(d, 1, init, nn::Activation::kIdentity, false);
  auto params = model.parameters();
  auto opt = optimizer_for(c, {{"name", "sgd"}, {"lr", 0.1}});
  optim::MinibatchIterator it(ds, batch, root.split("shuffle").engine()());

  auto full_mse = [&] {
    Tape tape;
    return optim::mse(model(tape.constant(ds.inputs)), ds.targets).value().item();
  };
  RunResult r;
  Index step = 0;
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    double total = 0.0, norm = 0.0;
    for (Index b = 0; b < it.batches_per_epoch(); ++b) {
      const auto mb = it.next();
      Tape tape;
      Var loss = optim::mse(model(tape.constant(mb.inputs)), mb.targets);
      auto grads = ad::backward(tape, loss);
      norm = grads.global_norm();
      total += loss.value().item();
      opt->step(params, grads);
      ++step;
    }
    r.metrics.push_back({epoch, step, total / static_cast<double>(it.batches_per_epoch()), full_mse(),
                         opt->learning_rate(), norm});
  }
  const Tensor w_closed = optim::least_squares(ds.inputs, ds.targets.reshaped({n}));
  double closed = 0.0;
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < d; ++j) s += ds.inputs(i, j) * w_closed[j];
    closed += (s - ds.targets[i]) * (s - ds.targets[i]) / static_cast<double>(n);
  }
  const double final_mse = full_mse();
  r.evaluation = {{"mse", final_mse}, {"closed_form_mse", closed}, {"excess", final_mse - closed}};
  artifacts.checkpoint = [&model, params](const fs::path& dir) {
    nn::save_checkpoint(dir, {{"kind", "linear"}, {"in", model.in_features()}, {"out", 1}}, params);
  };
  return r;
}

// ---------------------------------------------------------------------------
// char_lm

std::string corpus_text(const Block& data) {
  if (data.has("text")) {
    std::string t = data.text("text", "");
    if (t.size() < 2) throw ConfigError("data.text: needs at least two characters");
    return t;
  }
  if (data.has("path")) {
    const std::string path = data.text("path", "");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("data.path: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str().size() < 2) throw ConfigError("data.path: needs at least two characters");
    return ss.str();
  }
  throw ConfigError("data: char_lm needs data.text or data.path");
}

CharConvLM::Options char_options(const Block& model) {
  CharConvLM::Options o;
  o.embed = model.integer("embed", o.embed, 1);
  o.dilations = model.integers("dilations", o.dilations, 1);
  o.half_width = model.integer("half_width", o.half_width, 1);
  return o;
}

RunResult run_char_lm(const ExperimentConfig& c, Artifacts& artifacts) {
  Block data(c.data, "data"), model_block(c.model, "model"), schedule(c.schedule, "schedule");
  const std::string text = corpus_text(data);
  const Index context = data.integer("context", 64, 1);
  const Index steps = schedule.integer("steps", 300, 1);
  const Index log_every = schedule.integer("log_every", 10, 1);
  CharTokenizer tok;
  std::vector<Index> ids{CharTokenizer::kBos};
  for (Index t : tok.encode(text)) ids.push_back(t);
  const auto total = static_cast<Index>(ids.size());
  const Index window = std::min(context, total - 1);

  Rng root(c.seed);
  Rng init = root.split("init"), pick = root.split("shuffle");
  auto model = std::make_shared<CharConvLM>(tok.vocabulary(), char_options(model_block), init);
  auto params = model->parameters();
  auto opt = optimizer_for(c, {{"name", "adam"}, {"lr", 0.01}});

  auto full_loss = [&] {
    Tape tape;
    const std::vector<Index> in(ids.begin(), ids.end() - 1);
    Tensor target({total - 1});
    for (Index i = 1; i < total; ++i) target[i - 1] = static_cast<double>(ids[static_cast<std::size_t>(i)]);
    return optim::cross_entropy(model->logits(tape, in), target).value().item();
  };

  RunResult r;
  for (Index step = 0; step < steps; ++step) {
    const auto start = static_cast<Index>(pick.below(static_cast<std::uint64_t>(total - window)));
    const std::vector<Index> in(ids.begin() + start, ids.begin() + start + window);
    Tensor target({window});
    for (Index i = 0; i < window; ++i) target[i] = static_cast<double>(ids[static_cast<std::size_t>(start + i + 1)]);
    Tape tape;
    Var loss = optim::cross_entropy(model->logits(tape, in), target);
    auto grads = ad::backward(tape, loss);
    if (step % log_every == 0 || step + 1 == steps)
      r.metrics.push_back({step * window / (total - 1), step, loss.value().item(), full_loss(), opt->learning_rate(),
                           grads.global_norm()});
    opt->step(params, grads);
  }
  const double final_loss = full_loss();
  LoadedCharModel loaded{*model, tok};
  const std::string prompt = text.substr(0, std::min<std::size_t>(8, text.size()));
  r.evaluation = {{"loss", final_loss},
                  {"bits_per_char", final_loss / std::log(2.0)},
                  {"prompt", prompt},
                  {"greedy_sample", generate_text(loaded, prompt, {.max_len = 32})}};
  artifacts.checkpoint = [model, params](const fs::path& dir) { nn::save_checkpoint(dir, model->spec(), params); };
  return r;
}

// ---------------------------------------------------------------------------
// node_classify

graph::GraphDataset synthetic_communities(const Block& data, Rng& rng) {
  const Index n = data.integer("nodes", 60, 4);
  const Index classes = data.integer("classes", 2, 2);
  const Index features = data.integer("features", 4, 1);
  const double p_in = data.number("p_in", 0.25), p_out = data.number("p_out", 0.02);
  const double signal = data.number("signal", 0.5);
  const double train_fraction = data.number("train_fraction", 0.3);
  graph::GraphDataset ds;
  for (Index i = 0; i < n; ++i) ds.labels.push_back(i % classes);
  std::vector<std::pair<Index, Index>> edges;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (rng.bernoulli(ds.labels[static_cast<std::size_t>(i)] == ds.labels[static_cast<std::size_t>(j)] ? p_in : p_out))
        edges.emplace_back(i, j);
  ds.graph = graph::SparseGraph(n, edges);
  ds.graph.features = rng.normal_tensor({n, features}, 0.0, 1.0);
  for (Index i = 0; i < n; ++i) ds.graph.features(i, ds.labels[static_cast<std::size_t>(i)] % features) += signal;
  for (Index i = 0; i < n; ++i) ds.train_mask.push_back(i < classes || rng.bernoulli(train_fraction));
  return ds;
}

RunResult run_node_classify(const ExperimentConfig& c, Artifacts& artifacts) {
  Block data(c.data, "data"), model_block(c.model, "model"), schedule(c.schedule, "schedule");
  Rng root(c.seed);
  Rng gen = root.split("data"), init = root.split("init");
  graph::GraphDataset ds = data.has("path") ? graph::load_graph_json(data.text("path", ""))
                                            : synthetic_communities(data, gen);
  const Index n = ds.graph.nodes();
  if (ds.graph.features.rank() != 2 || ds.graph.features.dim(0) != n)
    throw ConfigError("data: node_classify needs (n, c) node features");
  if (static_cast<Index>(ds.labels.size()) != n) throw ConfigError("data.y: expected one label per node");
  Index classes = 0;
  for (Index y : ds.labels) classes = std::max(classes, y + 1);
  const Index hidden = model_block.integer("hidden", 16, 1);
  const Index epochs = schedule.integer("epochs", 200, 1);
  const Index log_every = schedule.integer("log_every", 10, 1);
  graph::GraphConv gc1(ds.graph.features.dim(1), hidden, init, nn::Activation::kRelu);
  graph::GraphConv gc2(hidden, classes, init, nn::Activation::kIdentity);
  auto params = collect({{"gc1", gc1.parameters()}, {"gc2", gc2.parameters()}});
  auto opt = optimizer_for(c, {{"name", "adam"}, {"lr", 0.02}});
  const graph::GraphShift shift =
      graph::graph_shift(ds.graph, graph::ShiftKind::kSymNorm, {.self_loops = true, .guard_isolated = true});

  std::vector<Index> test_rows;
  for (Index i = 0; i < n; ++i)
    if (!ds.train_mask[static_cast<std::size_t>(i)]) test_rows.push_back(i);
  auto accuracy = [&](const Tensor& logits, bool train) {
    double hits = 0.0, count = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (ds.train_mask[static_cast<std::size_t>(i)] != train) continue;
      count += 1.0;
      hits += row_argmax(logits, i) == ds.labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return count > 0 ? hits / count : 0.0;
  };
  auto forward = [&](Tape& tape) { return gc2(shift, gc1(shift, tape.constant(ds.graph.features))); };

  RunResult r;
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    Tape tape;
    Var logits = forward(tape);
    Var loss = graph::masked_cross_entropy(logits, ds.labels, ds.train_mask);
    auto grads = ad::backward(tape, loss);
    if (epoch % log_every == 0 || epoch + 1 == epochs)
      r.metrics.push_back({epoch, epoch, loss.value().item(), accuracy(logits.value(), false), opt->learning_rate(),
                           grads.global_norm()});
    opt->step(params, grads);
  }
  Tape tape;
  const Tensor logits = forward(tape).value();
  const auto report = calibrate(logits, ds.labels, test_rows);
  r.evaluation = {{"train_accuracy", accuracy(logits, true)},
                  {"test_accuracy", accuracy(logits, false)},
                  {"test_nodes", test_rows.size()},
                  {"calibration", calibration_json(report)}};
  artifacts.files.emplace_back("reliability.csv", reliability_csv(report));
  artifacts.checkpoint = [params, hidden, classes](const fs::path& dir) {
    nn::save_checkpoint(dir, {{"kind", "gcn"}, {"hidden", hidden}, {"classes", classes}}, params);
  };
  return r;
}

// ---------------------------------------------------------------------------
// graph_classify

RunResult run_graph_classify(const ExperimentConfig& c, Artifacts& artifacts) {
  Block data(c.data, "data"), model_block(c.model, "model"), schedule(c.schedule, "schedule");
  const Index count = data.integer("graphs", 80, 4);
  const Index min_nodes = data.integer("min_nodes", 6, 2), max_nodes = data.integer("max_nodes", 12, 2);
  if (max_nodes < min_nodes) throw ConfigError("data.max_nodes: must be at least data.min_nodes");
  const double p_low = data.number("p_low", 0.15), p_high = data.number("p_high", 0.6);
  const double test_fraction = data.number("test_fraction", 0.25);
  const Index hidden = model_block.integer("hidden", 16, 1);
  const Index epochs = schedule.integer("epochs", 60, 1);
  const Index batch = schedule.integer("batch_size", 8, 1);

  Rng root(c.seed);
  Rng gen = root.split("data"), init = root.split("init");
  std::vector<graph::SparseGraph> graphs;
  std::vector<Index> labels;
  for (Index g = 0; g < count; ++g) {
    const Index y = g % 2;
    const Index n = min_nodes + static_cast<Index>(gen.below(static_cast<std::uint64_t>(max_nodes - min_nodes + 1)));
    std::vector<std::pair<Index, Index>> edges;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if (gen.bernoulli(y == 0 ? p_low : p_high)) edges.emplace_back(i, j);
    graph::SparseGraph sg(n, edges);
    const Tensor deg = graph::degree(sg);
    sg.features = Tensor::ones({n, 2});
    for (Index i = 0; i < n; ++i) sg.features(i, 1) = deg[i];
    graphs.push_back(std::move(sg));
    labels.push_back(y);
  }
  const auto test_count = std::max<Index>(1, static_cast<Index>(std::round(test_fraction * static_cast<double>(count))));
  const Index train_count = count - test_count;
  if (train_count < batch) throw ConfigError("schedule.batch_size: exceeds the number of training graphs");

  graph::GraphConv gc1(2, hidden, init, nn::Activation::kRelu);
  graph::GraphConv gc2(hidden, hidden, init, nn::Activation::kRelu);
  nn::Linear head(hidden, 2, init);
  auto params = collect({{"gc1", gc1.parameters()}, {"gc2", gc2.parameters()}, {"head", head.parameters()}});
  auto opt = optimizer_for(c, {{"name", "adam"}, {"lr", 0.01}});

  auto forward = [&](Tape& tape, const std::vector<Index>& which) {
    std::vector<graph::SparseGraph> parts;
    for (Index g : which) parts.push_back(graphs[static_cast<std::size_t>(g)]);
    const graph::SparseGraph b = graph::batch_graphs(parts);
    Var h = gc2(b, gc1(b, tape.constant(b.features)));
    return head(graph::graph_readout(h, b.graph_id, b.graphs));
  };
  auto label_tensor = [&](const std::vector<Index>& which) {
    Tensor t({static_cast<Index>(which.size())});
    for (std::size_t i = 0; i < which.size(); ++i) t[static_cast<Index>(i)] = static_cast<double>(labels[static_cast<std::size_t>(which[i])]);
    return t;
  };
  std::vector<Index> test_ids(static_cast<std::size_t>(test_count));
  std::iota(test_ids.begin(), test_ids.end(), train_count);
  std::vector<Index> test_labels;
  for (Index g : test_ids) test_labels.push_back(labels[static_cast<std::size_t>(g)]);
  auto test_accuracy = [&](const Tensor& logits) {
    double hits = 0.0;
    for (Index i = 0; i < test_count; ++i) hits += row_argmax(logits, i) == test_labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    return hits / static_cast<double>(test_count);
  };

  optim::Dataset index_set{Tensor({train_count, 1}), Tensor({train_count})};
  for (Index i = 0; i < train_count; ++i) index_set.inputs[i] = static_cast<double>(i);
  optim::MinibatchIterator it(index_set, batch, root.split("shuffle").engine()());
  RunResult r;
  Index step = 0;
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    double total = 0.0, norm = 0.0;
    for (Index b = 0; b < it.batches_per_epoch(); ++b) {
      const auto mb = it.next();
      Tape tape;
      Var loss = optim::cross_entropy(forward(tape, mb.indices), label_tensor(mb.indices));
      auto grads = ad::backward(tape, loss);
      norm = grads.global_norm();
      total += loss.value().item();
      opt->step(params, grads);
      ++step;
    }
    Tape tape;
    r.metrics.push_back({epoch, step, total / static_cast<double>(it.batches_per_epoch()),
                         test_accuracy(forward(tape, test_ids).value()), opt->learning_rate(), norm});
  }
  Tape tape;
  const Tensor logits = forward(tape, test_ids).value();
  std::vector<Index> rows(static_cast<std::size_t>(test_count));
  std::iota(rows.begin(), rows.end(), 0);
  const auto report = calibrate(logits, test_labels, rows);
  r.evaluation = {{"test_accuracy", test_accuracy(logits)},
                  {"test_graphs", test_count},
                  {"calibration", calibration_json(report)}};
  artifacts.files.emplace_back("reliability.csv", reliability_csv(report));
  artifacts.checkpoint = [params, hidden](const fs::path& dir) {
    nn::save_checkpoint(dir, {{"kind", "graph_gcn"}, {"hidden", hidden}}, params);
  };
  return r;
}

// ---------------------------------------------------------------------------
// ua_demo

std::function<double(double)> ua_target(const std::string& name) {
  if (name == "sinc") return sinc;
  if (name == "sin") return [](double x) { return std::sin(x); };
  if (name == "square") return [](double x) { return x * x; };
  throw ConfigError("data.function: unknown function '" + name + "'");
}

RunResult run_ua_demo(const ExperimentConfig& c, Artifacts& artifacts) {
  Block model(c.model, "model"), data(c.data, "data");
  const auto bins = model.integers("bins", {5, 15, 50}, 1);
  const double slope = model.positive("slope", 1e4);
  const double lo = data.number("lo", 0.0), hi = data.number("hi", 10.0);
  if (!(hi > lo)) throw ConfigError("data.hi: must exceed data.lo");
  const Index points = data.integer("grid", 1000, 2);
  const auto g = ua_target(data.text("function", "sinc"));
  const auto grid = linspace(lo, hi, points);

  RunResult r;
  nlohmann::json mse = nlohmann::json::object(), units = nlohmann::json::object();
  std::string curve = "m,x,g,f\n";
  char buf[160];
  double previous = std::numeric_limits<double>::infinity();
  bool decreasing = true;
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const UAModel ua = ua_construct(g, {bins[k], lo, hi, slope});
    const double e = ua_mse(ua, g, grid);
    decreasing = decreasing && e < previous;
    previous = e;
    mse[std::to_string(bins[k])] = e;
    units[std::to_string(bins[k])] = ua.hidden_units();
    r.metrics.push_back({static_cast<Index>(k), bins[k], e, e, 0.0, 0.0});
    for (double x : grid) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(bins[k]), x, g(x), ua(x));
      curve += buf;
    }
  }
  r.evaluation = {{"mse", mse}, {"hidden_units", units}, {"strictly_decreasing", decreasing}, {"grid", points}};
  artifacts.files.emplace_back("ua_curve.csv", curve);
  return r;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const fs::path& out_dir) {
  Artifacts artifacts;
  RunResult result;
  switch (config.task) {
    case TaskKind::kXor: result = run_xor(config, artifacts); break;
    case TaskKind::kRegression: result = run_regression(config, artifacts); break;
    case TaskKind::kCharLm: result = run_char_lm(config, artifacts); break;
    case TaskKind::kNodeClassify: result = run_node_classify(config, artifacts); break;
    case TaskKind::kGraphClassify: result = run_graph_classify(config, artifacts); break;
    case TaskKind::kUaDemo: result = run_ua_demo(config, artifacts); break;
  }
  result.evaluation["task"] = to_string(config.task);
  result.evaluation["seed"] = config.seed;
  if (out_dir.empty()) return result;
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config.to_json().dump(2) + "\n");
  write_text(out_dir / "metrics.csv", metrics_csv(result.metrics));
  write_text(out_dir / "evaluation.json", result.evaluation.dump(2) + "\n");
  for (const auto& [name, text] : artifacts.files) write_text(out_dir / name, text);
  if (artifacts.checkpoint) artifacts.checkpoint(out_dir / "checkpoint");
  return result;
}

XorOutcome train_xor(Index hidden, std::uint64_t seed, Index steps, double lr) {
  return xor_loop(hidden, seed, steps, optim::make_optimizer({{"name", "adam"}, {"lr", lr}}), 1, nullptr);
}

LoadedCharModel load_char_model(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.json")) throw ConfigError("run: missing " + (run_dir / "config.json").string());
  const ExperimentConfig config = load_config(run_dir / "config.json");
  if (config.task != TaskKind::kCharLm) throw ConfigError("task: run directory does not hold a char_lm model");
  Rng rng(0);
  CharTokenizer tok;
  LoadedCharModel loaded{CharConvLM(tok.vocabulary(), char_options(Block(config.model, "model")), rng), tok};
  nn::load_checkpoint(run_dir / "checkpoint", loaded.model.parameters());
  return loaded;
}

DecodeMode decode_mode_from_string(const std::string& name) {
  if (name == "greedy") return DecodeMode::kGreedy;
  if (name == "sample") return DecodeMode::kSample;
  if (name == "beam") return DecodeMode::kBeam;
  throw ConfigError("mode: expected greedy, sample or beam, got '" + name + "'");
}

std::string generate_text(const LoadedCharModel& loaded, const std::string& prompt, const GenerateOptions& options) {
  std::vector<Index> ids{CharTokenizer::kBos};
  for (Index t : loaded.tokenizer.encode(prompt)) ids.push_back(t);
  const auto start = ids.size();
  const NextTokenFn next = [&](const std::vector<Index>& prefix) { return loaded.model.next_log_probs(prefix); };
  std::vector<Index> out;
  switch (options.mode) {
    case DecodeMode::kGreedy: out = greedy_decode(next, ids, options.max_len); break;
    case DecodeMode::kSample: {
      Rng rng = Rng(options.seed).split("sample");
      out = sample_decode(next, ids, options.max_len, options.temperature, rng);
      break;
    }
    case DecodeMode::kBeam: out = beam_search(next, ids, options.max_len, options.beam).front().tokens; break;
  }
  return loaded.tokenizer.decode(std::vector<Index>(out.begin() + static_cast<std::ptrdiff_t>(start), out.end()));
}

}  // namespace difflab::harness
