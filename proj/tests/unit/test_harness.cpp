#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "difflab/attention/attention.hpp"
#include "difflab/autodiff/ops.hpp"
#include "difflab/errors.hpp"
#include "difflab/harness/bench.hpp"
#include "difflab/harness/config.hpp"
#include "difflab/harness/export.hpp"
#include "difflab/harness/gradcheck_suite.hpp"
#include "difflab/harness/tasks.hpp"
#include "difflab/harness/text.hpp"
#include "difflab/harness/ua.hpp"
#include "support.hpp"

using namespace difflab;
using namespace difflab::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("difflab_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_starting(const std::string& text, const std::string& prefix) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (line.rfind(prefix, 0) == 0) out.push_back(line);
  return out;
}

// Next-token table over {0, 1, 2} conditioned on the last token only.
// From the start token 0 greedy takes 1 (p = 0.5), after which every
// continuation is flat; taking 2 (p = 0.4) leads to a near-certain 0.
Tensor table_model(const std::vector<Index>& prefix) {
  static const double p[3][3] = {{0.1, 0.5, 0.4}, {0.34, 0.33, 0.33}, {0.9, 0.05, 0.05}};
  const Index last = prefix.back();
  Tensor out({3});
  for (Index j = 0; j < 3; ++j) out[j] = std::log(p[last][j]);
  return out;
}

double sequence_log_prob(const NextTokenFn& model, const std::vector<Index>& prompt, const std::vector<Index>& tail) {
  std::vector<Index> seq = prompt;
  double total = 0.0;
  for (Index t : tail) {
    const Tensor s = model(seq);
    const double lse = std::log(s.array().exp().sum());
    total += s[t] - lse;
    seq.push_back(t);
  }
  return total;
}

// Exhaustive search over all continuations of the given length.
std::pair<std::vector<Index>, double> best_sequence(const NextTokenFn& model, const std::vector<Index>& prompt,
                                                   Index length, Index vocab) {
  std::vector<Index> best;
  double best_lp = -std::numeric_limits<double>::infinity();
  Index total = 1;
  for (Index i = 0; i < length; ++i) total *= vocab;
  for (Index code = 0; code < total; ++code) {
    std::vector<Index> tail;
    Index c = code;
    for (Index i = 0; i < length; ++i) {
      tail.push_back(c % vocab);
      c /= vocab;
    }
    std::reverse(tail.begin(), tail.end());
    const double lp = sequence_log_prob(model, prompt, tail);
    if (lp > best_lp) {
      best_lp = lp;
      best = tail;
    }
  }
  return {best, best_lp};
}

CharConvLM random_lm(std::uint64_t seed) {
  Rng rng(seed);
  return CharConvLM(CharTokenizer::kVocabulary, {.embed = 8, .dilations = {1, 2}, .half_width = 1}, rng);
}

ExperimentConfig config_of(const std::string& text) { return parse_config(json::parse(text)); }

std::string config_error(const std::string& text) {
  try {
    run_experiment(config_of(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokenizer and decoding

TEST_CASE("tokenizer round-trips printable ASCII and substitutes OOV") {
  CharTokenizer tok;
  std::string printable;
  for (int c = 32; c <= 126; ++c) printable.push_back(static_cast<char>(c));
  const auto ids = tok.encode(printable);
  CHECK(ids.front() == 0);
  CHECK(ids.back() == 94);
  CHECK(tok.decode(ids) == printable);
  CHECK(tok.vocabulary() == 97);

  const auto odd = tok.encode("a\tb");
  CHECK(odd[1] == CharTokenizer::kOov);
  CHECK(tok.decode(odd) == "a\xEF\xBF\xBD" "b");
  CHECK(tok.decode({CharTokenizer::kBos, tok.encode("x")[0]}) == "x");
  CHECK_THROWS_AS(tok.decode({97}), VocabularyError);
}

TEST_CASE("sampling at vanishing temperature reproduces greedy decoding") {
  const CharConvLM lm = random_lm(3);
  const NextTokenFn next = [&](const std::vector<Index>& p) { return lm.next_log_probs(p); };
  const std::vector<Index> prompt{CharTokenizer::kBos, 40, 65};
  Rng rng(9);
  CHECK(sample_decode(next, prompt, 20, 1e-9, rng) == greedy_decode(next, prompt, 20));
}

TEST_CASE("beam search with width 1 is greedy decoding") {
  const CharConvLM lm = random_lm(4);
  const NextTokenFn next = [&](const std::vector<Index>& p) { return lm.next_log_probs(p); };
  const std::vector<Index> prompt{CharTokenizer::kBos, 10};
  CHECK(beam_search(next, prompt, 15, 1).front().tokens == greedy_decode(next, prompt, 15));
}

TEST_CASE("beam of width 3 finds the exhaustive optimum where greedy does not") {
  const NextTokenFn next = table_model;
  const std::vector<Index> prompt{0};
  for (Index length : {2, 3, 4}) {
    CAPTURE(length);
    const auto [best, best_lp] = best_sequence(next, prompt, length, 3);
    const auto beams = beam_search(next, prompt, length, 3);
    const std::vector<Index> beam_tail(beams.front().tokens.begin() + 1, beams.front().tokens.end());
    CHECK(beam_tail == best);
    CHECK(beams.front().log_prob == doctest::Approx(best_lp).epsilon(1e-12));

    const auto greedy = greedy_decode(next, prompt, length);
    const std::vector<Index> greedy_tail(greedy.begin() + 1, greedy.end());
    CHECK(sequence_log_prob(next, prompt, greedy_tail) < best_lp - 0.1);
  }
}

TEST_CASE("beam hypotheses are ranked and carry their cumulative log-probability") {
  const CharConvLM lm = random_lm(5);
  const NextTokenFn next = [&](const std::vector<Index>& p) { return lm.next_log_probs(p); };
  const std::vector<Index> prompt{CharTokenizer::kBos};
  const auto beams = beam_search(next, prompt, 6, 4);
  REQUIRE(beams.size() == 4);
  for (std::size_t i = 0; i < beams.size(); ++i) {
    if (i > 0) CHECK(beams[i - 1].log_prob >= beams[i].log_prob);
    const std::vector<Index> tail(beams[i].tokens.begin() + 1, beams[i].tokens.end());
    CHECK(beams[i].log_prob == doctest::Approx(sequence_log_prob(next, prompt, tail)).epsilon(1e-10));
  }
}

TEST_CASE("greedy decoding is causal: feeding back emitted tokens changes nothing") {
  const CharConvLM lm = random_lm(6);
  const NextTokenFn next = [&](const std::vector<Index>& p) { return lm.next_log_probs(p); };
  const std::vector<Index> prompt{CharTokenizer::kBos, 33, 71};
  const auto full = greedy_decode(next, prompt, 24);
  for (Index k : {1, 5, 12, 23}) {
    const std::vector<Index> longer(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(prompt.size()) + k);
    CHECK(greedy_decode(next, longer, 24 - k) == full);
  }
}

TEST_CASE("next-token scores only depend on the receptive field") {
  const CharConvLM lm = random_lm(7);
  CHECK(lm.receptive_field() == 1 + 2 * (1 + 2));
  std::vector<Index> a{5, 6, 7, 8, 9, 10, 11, 12, 13};
  std::vector<Index> b = a;
  b[0] = 60;
  b[1] = 61;
  CHECK(testing::max_diff(lm.next_log_probs(a), lm.next_log_probs(b)) == 0.0);
  b[5] = 2;
  CHECK(testing::max_diff(lm.next_log_probs(a), lm.next_log_probs(b)) > 0.0);
}

TEST_CASE("char model scores match a full teacher-forced forward pass") {
  const CharConvLM lm = random_lm(8);
  const std::vector<Index> ids{CharTokenizer::kBos, 3, 4, 5};
  ad::Tape tape;
  const Tensor logits = lm.logits(tape, ids).value();
  const Tensor last = lm.next_log_probs(ids);
  Tensor row({logits.dim(1)});
  for (Index j = 0; j < row.size(); ++j) row[j] = logits(3, j);
  const double lse = logsumexp(row).item();
  for (Index j = 0; j < row.size(); ++j) CHECK(last[j] == doctest::Approx(row[j] - lse).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Universal approximation

TEST_CASE("UA sinc MSE matches the reported values within a factor of two") {
  const auto grid = linspace(0.0, 10.0, 1000);
  const std::vector<std::pair<Index, double>> reported{{5, 0.02}, {15, 0.002}, {50, 0.00016}};
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& [m, target] : reported) {
    CAPTURE(m);
    const UAModel model = ua_construct(sinc, {m, 0.0, 10.0});
    CHECK(model.hidden_units() == 2 * m);
    const double mse = ua_mse(model, sinc, grid);
    CHECK(mse / target >= 0.5);
    CHECK(mse / target <= 2.0);
    CHECK(mse < previous);
    previous = mse;
  }
}

TEST_CASE("UA model of a constant is that constant on the covered bins") {
  const double c = -1.75;
  const UABinSpec spec{8, 0.0, 4.0};
  const UAModel model = ua_construct([c](double) { return c; }, spec);
  const double sliver = 10.0 / spec.slope;
  Rng rng(1);
  const double half = spec.width() / 2.0;
  for (int k = 0; k < 500; ++k) {
    const double x = rng.uniform(spec.lo - half, spec.hi - half);
    bool near_edge = false;
    for (Index i = 0; i <= spec.bins; ++i)
      near_edge = near_edge || std::abs(x - (spec.lo - half + static_cast<double>(i) * spec.width())) <= sliver;
    if (near_edge) continue;
    CHECK(model(x) == doctest::Approx(c).epsilon(1e-4));
  }
  for (Index i = 0; i < spec.bins; ++i) CHECK(model.bin_value[static_cast<std::size_t>(i)] == doctest::Approx(c).epsilon(1e-15));
}

TEST_CASE("UA reproduces a function already piecewise constant on the bin grid") {
  const UABinSpec spec{6, -1.0, 2.0};
  const double half = spec.width() / 2.0;
  const std::vector<double> level{0.3, -1.2, 2.5, 0.0, 0.9, -0.4};
  auto g = [&](double x) {
    const auto i = static_cast<Index>(std::floor((x - (spec.lo - half)) / spec.width()));
    return level[static_cast<std::size_t>(std::clamp<Index>(i, 0, spec.bins - 1))];
  };
  const UAModel model = ua_construct(g, spec);
  for (Index i = 0; i < spec.bins; ++i)
    CHECK(model.bin_value[static_cast<std::size_t>(i)] == doctest::Approx(level[static_cast<std::size_t>(i)]).epsilon(1e-15));
  // Outside the slivers each neighbouring unit is within e^-10 of its plateau.
  const double sliver = 10.0 / spec.slope;
  const double bound = 2.0 * std::exp(-10.0) * 2.5;
  for (Index i = 0; i < spec.bins; ++i) {
    const double a = spec.center(i) - half, b = spec.center(i) + half;
    for (double t : {0.0, 0.13, 0.5, 0.77, 1.0}) {
      const double x = (a + sliver) + t * (b - a - 2.0 * sliver);
      CHECK(std::abs(model(x) - g(x)) <= bound);
    }
  }
}

TEST_CASE("bin average is the midpoint-rule mean") {
  // Exact for affine g; for x^2 the midpoint rule error is -(b-a)^2 / (12 n^2).
  CHECK(bin_average([](double x) { return 3.0 * x - 1.0; }, 1.0, 2.0) == doctest::Approx(3.5).epsilon(1e-14));
  const double a = 0.5, b = 2.0, n = 128.0;
  const double exact = (b * b * b - a * a * a) / (3.0 * (b - a));
  CHECK(bin_average([](double x) { return x * x; }, a, b) ==
        doctest::Approx(exact - (b - a) * (b - a) / (12.0 * n * n)).epsilon(1e-13));
}

TEST_CASE("UA construction validates its bin spec") {
  CHECK_THROWS_AS(ua_construct(sinc, {0, 0.0, 1.0}), DomainError);
  CHECK_THROWS_AS(ua_construct(sinc, {3, 1.0, 1.0}), DomainError);
  CHECK(UABinSpec{4, 0.0, 2.0}.center(3) == doctest::Approx(1.5));
}

// ---------------------------------------------------------------------------
// Config validation

TEST_CASE("config errors name the offending field") {
  auto parse_error = [](const std::string& text) {
    try {
      config_of(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  CHECK(parse_error(R"({"seed": 1})").rfind("task:", 0) == 0);
  CHECK(parse_error(R"({"task": "chess"})").rfind("task:", 0) == 0);
  CHECK(parse_error(R"({"task": "xor", "sede": 1})").rfind("sede:", 0) == 0);
  CHECK(parse_error(R"({"task": "xor", "seed": -3})").rfind("seed:", 0) == 0);
  CHECK(parse_error(R"({"task": "xor", "model": []})").rfind("model:", 0) == 0);
  CHECK(parse_error(R"([1, 2])").rfind("<root>:", 0) == 0);

  CHECK(config_error(R"({"task": "xor", "schedule": {"steps": 0}})").rfind("schedule.steps:", 0) == 0);
  CHECK(config_error(R"({"task": "xor", "model": {"kind": "cnn"}})").rfind("model.kind:", 0) == 0);
  CHECK(config_error(R"({"task": "xor", "optimizer": {"name": "rmsprop"}})").rfind("optimizer.name:", 0) == 0);
  CHECK(config_error(R"({"task": "xor", "optimizer": {"lr": -0.1}})").rfind("optimizer.lr:", 0) == 0);
  CHECK(config_error(R"({"task": "regression", "optimizer": {"momentum": 1.0}})").rfind("optimizer.momentum:", 0) == 0);
  CHECK(config_error(R"({"task": "xor", "optimizer": {"beta2": 1.5}})").rfind("optimizer.beta2:", 0) == 0);
  CHECK(config_error(R"({"task": "regression", "data": {"noise": "loud"}})").rfind("data.noise:", 0) == 0);
  CHECK(config_error(R"({"task": "char_lm"})").rfind("data:", 0) == 0);
  CHECK(config_error(R"({"task": "char_lm", "data": {"path": "/nonexistent/corpus.txt"}})").rfind("data.path:", 0) == 0);
  CHECK(config_error(R"({"task": "ua_demo", "model": {"bins": [5, 0]}})").rfind("model.bins[1]:", 0) == 0);
  CHECK(config_error(R"({"task": "ua_demo", "data": {"function": "zeta"}})").rfind("data.function:", 0) == 0);
}

TEST_CASE("config round-trips through its JSON form") {
  const auto c = config_of(R"({"task": "regression", "seed": 12, "data": {"n": 50}, "output": "runs/x"})");
  const auto again = parse_config(c.to_json());
  CHECK(again.task == TaskKind::kRegression);
  CHECK(again.seed == 12);
  CHECK(again.data == c.data);
  CHECK(again.output == c.output);
}

// ---------------------------------------------------------------------------
// Training tasks

TEST_CASE("xor: a linear model cannot separate it, a small ReLU MLP can") {
  for (std::uint64_t seed : {0, 1, 2}) {
    CAPTURE(seed);
    CHECK(train_xor(0, seed, 2000).accuracy <= 0.75);
    const auto mlp = train_xor(8, seed, 2000);
    CHECK(mlp.accuracy == 1.0);
    CHECK(mlp.steps_to_perfect >= 0);
  }
}

TEST_CASE("regression reaches the closed-form MSE within 1e-3") {
  const auto r = run_experiment(config_of(R"({"task": "regression", "seed": 2})"));
  const double mse = r.evaluation["mse"], closed = r.evaluation["closed_form_mse"];
  CHECK(closed > 0.0);
  CHECK(mse <= closed + 1e-3);
  CHECK(mse >= closed - 1e-12);
}

TEST_CASE("same config and seed give a byte-identical metrics CSV") {
  const std::string text = R"({"task": "regression", "seed": 4, "schedule": {"epochs": 20}})";
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  run_experiment(config_of(text), a);
  run_experiment(config_of(text), b);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "evaluation.json") == slurp(b / "evaluation.json"));
  auto other = config_of(text);
  other.seed = 5;
  run_experiment(other, c);
  CHECK(slurp(a / "metrics.csv") != slurp(c / "metrics.csv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("train writes config, metrics, evaluation and a reloadable checkpoint") {
  const fs::path dir = scratch("artifacts");
  const auto result = run_experiment(config_of(R"({"task": "xor", "seed": 3, "schedule": {"steps": 300, "log_every": 30}})"), dir);
  CHECK(fs::exists(dir / "config.json"));
  CHECK(fs::exists(dir / "evaluation.json"));
  CHECK(fs::exists(dir / "checkpoint" / "manifest.json"));
  CHECK(fs::exists(dir / "checkpoint" / "params.bin"));
  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(csv.rfind("epoch,step,loss,val_metric,lr,grad_norm\n", 0) == 0);
  CHECK(lines_starting(csv, "").size() == result.metrics.size() + 1);
  CHECK(result.metrics.size() == 10);
  CHECK(parse_config(json::parse(slurp(dir / "config.json"))).seed == 3);
  fs::remove_all(dir);
}

TEST_CASE("char_lm trains, reloads from disk and generates the same text") {
  const fs::path dir = scratch("char_lm");
  const auto r = run_experiment(config_of(R"({
    "task": "char_lm", "seed": 1,
    "model": {"embed": 16, "dilations": [1, 2, 4]},
    "data": {"text": "abcabcabcabcabcabcabcabc", "context": 12},
    "schedule": {"steps": 150}})"),
                                dir);
  CHECK(r.evaluation["loss"].get<double>() < 0.2);
  const LoadedCharModel loaded = load_char_model(dir);
  const std::string greedy = generate_text(loaded, "abca", {.max_len = 8});
  CHECK(greedy == "bcabcabc");
  CHECK(generate_text(loaded, "abca", {.mode = DecodeMode::kBeam, .max_len = 8, .beam = 3}) == greedy);
  const std::string sampled = generate_text(loaded, "abca", {.mode = DecodeMode::kSample, .max_len = 8, .seed = 2});
  CHECK(sampled.size() == 8);
  CHECK(generate_text(loaded, "abca", {.mode = DecodeMode::kSample, .max_len = 8, .seed = 2}) == sampled);
  CHECK_THROWS_AS(decode_mode_from_string("nucleus"), ConfigError);
  CHECK_THROWS_AS(load_char_model(scratch("missing")), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("graph tasks learn their synthetic data") {
  const auto node = run_experiment(config_of(R"({"task": "node_classify", "seed": 2})"));
  CHECK(node.evaluation["test_accuracy"].get<double>() >= 0.9);
  const auto graph = run_experiment(config_of(R"({"task": "graph_classify", "seed": 2})"));
  CHECK(graph.evaluation["test_accuracy"].get<double>() >= 0.85);
}

TEST_CASE("node_classify reads a graph file") {
  const fs::path dir = scratch("graph_file");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "g.json");
    out << R"({"n": 6, "edges": [[0,1],[1,2],[0,2],[3,4],[4,5],[3,5],[2,3]],
               "x": [[1,0],[1,0],[1,0],[0,1],[0,1],[0,1]],
               "y": [0,0,0,1,1,1], "train_mask": [true,false,false,true,false,false]})";
  }
  auto c = config_of(R"({"task": "node_classify", "seed": 1, "schedule": {"epochs": 100}})");
  c.data["path"] = (dir / "g.json").string();
  const auto r = run_experiment(c);
  CHECK(r.evaluation["test_accuracy"].get<double>() == 1.0);
  CHECK(r.evaluation["test_nodes"].get<int>() == 4);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Gradient-check sweep

namespace {

// square with a VJP that is off by a factor of two
class BuggySquare final : public ad::Primitive {
 public:
  std::string_view name() const override { return "test.buggy_square"; }
  Tensor forward(std::span<const Tensor> in) const override { return mul(in[0], in[0]); }
  Tensor vjp(std::span<const Tensor> in, const Tensor&, const Tensor& adj, std::size_t) const override {
    return mul(adj, in[0]);
  }
  Tensor jvp(std::span<const Tensor> in, const Tensor&, std::span<const Tensor> tan) const override {
    return mul(tan[0], in[0]) * 2.0;
  }
};

}  // namespace

TEST_CASE("gradcheck sweep passes at 1e-6 and covers every registered primitive") {
  const auto report = run_gradcheck_suite(gradcheck_catalogue(0));
  CHECK(report.pass);
  CHECK(report.failures() == 0);
  CHECK(report.uncovered.empty());
  for (const auto& name : ad::Registry::global().names()) {
    CAPTURE(name);
    CHECK(report.covered.contains(name));
  }
  const json j = report.to_json();
  CHECK(j["covered_primitives"].size() == ad::Registry::global().names().size());
  for (const auto& item : j["checks"]) {
    CHECK(item.contains("primitive"));
    CHECK(item.contains("max_rel_err"));
    CHECK(item["pass"].get<bool>());
  }
}

TEST_CASE("gradcheck sweep detects an injected VJP bug") {
  ad::Registry::global().add("test.buggy_square");
  auto cases = gradcheck_catalogue(0);
  auto x = std::make_shared<ad::Parameter>("x", Tensor::vector({0.4, -1.1, 0.8}));
  cases.push_back({"test.buggy_square",
                   [x](ad::Tape& t) {
                     auto prim = std::make_shared<BuggySquare>();
                     return ad::sum(t.record(prim, {t.param(*x)}));
                   },
                   {x.get()}});
  const auto report = run_gradcheck_suite(cases);
  CHECK_FALSE(report.pass);
  CHECK(report.failures() == 1);
  CHECK_FALSE(report.checks.back().pass);
  CHECK(report.checks.back().max_rel_err == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(report.uncovered.empty());
}

// ---------------------------------------------------------------------------
// Bench and export

TEST_CASE("naive single-query attention matches the differentiable attend") {
  Rng rng(2);
  const Tensor q = rng.normal_tensor({4}), keys = rng.normal_tensor({9, 4}), values = rng.normal_tensor({9, 3});
  ad::Tape tape;
  const Tensor ref = attn::attend(tape.constant(q.reshaped({1, 4})), tape.constant(keys), tape.constant(values)).value();
  CHECK(testing::max_diff(naive_attention(q, keys, values), ref.reshaped({3})) <= 1e-14);
}

TEST_CASE("bench passes its equivalence gate and reports both variants") {
  const auto rows = run_bench({.sizes = {16, 100}, .repeats = 1, .chunk = 7});
  CHECK(rows.size() == 8);
  for (const auto& r : rows) {
    CHECK(r.max_dev <= 1e-9);
    CHECK(r.threads == 1);
    CHECK(r.seconds >= 0.0);
  }
  const std::string csv = bench_csv(rows);
  CHECK(csv.rfind("kind,variant,n,seconds,max_dev,threads\n", 0) == 0);
  CHECK(lines_starting(csv, "scan,parallel,").size() == 2);
  CHECK(run_bench({.kinds = {"scan"}, .sizes = {8}, .repeats = 1}).size() == 2);
  CHECK_THROWS_AS(run_bench({.sizes = {8}, .repeats = 1, .tolerance = -1.0}), NumericError);
  CHECK_THROWS_AS(run_bench({.kinds = {"fft"}}), ContractError);
}

TEST_CASE("export emits loss, UA and reliability series") {
  const fs::path ua = scratch("export_ua"), node = scratch("export_node");
  const auto ua_run = run_experiment(config_of(R"({"task": "ua_demo"})"), ua);
  const std::string ua_csv = export_run(ua);
  CHECK(ua_csv.rfind("series,step,value\n", 0) == 0);
  CHECK(lines_starting(ua_csv, "loss,").size() == ua_run.metrics.size());
  CHECK(lines_starting(ua_csv, "ua.g,").size() == 1000);
  for (const char* m : {"ua.f.m5,", "ua.f.m15,", "ua.f.m50,"}) CHECK(lines_starting(ua_csv, m).size() == 1000);

  const auto node_run = run_experiment(config_of(R"({"task": "node_classify", "seed": 1, "schedule": {"epochs": 40}})"), node);
  const std::string node_csv = export_run(node);
  CHECK(lines_starting(node_csv, "loss,").size() == node_run.metrics.size());
  const auto acc = lines_starting(node_csv, "reliability.accuracy,");
  CHECK(!acc.empty());
  CHECK(acc.size() == lines_starting(node_csv, "reliability.confidence,").size());

  CHECK_THROWS_AS(export_run(scratch("export_missing")), ConfigError);
  fs::remove_all(ua);
  fs::remove_all(node);
}
