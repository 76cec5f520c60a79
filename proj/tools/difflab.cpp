#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "difflab/errors.hpp"
#include "difflab/harness/bench.hpp"
#include "difflab/harness/config.hpp"
#include "difflab/harness/export.hpp"
#include "difflab/harness/gradcheck_suite.hpp"
#include "difflab/harness/tasks.hpp"

namespace fs = std::filesystem;
using namespace difflab;
using namespace difflab::harness;

namespace {

constexpr int kValidation = 1;
constexpr int kNumeric = 2;

// Prints to stdout, or writes <out>/<name> when an output directory was given.
void emit(const std::optional<std::string>& out, const std::string& name, const std::string& text) {
  if (!out) {
    std::cout << text;
    return;
  }
  fs::create_directories(*out);
  const fs::path path = fs::path(*out) / name;
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ConfigError("out: cannot write " + path.string());
  file << text;
  std::cerr << "wrote " << path.string() << "\n";
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
  ExperimentConfig config = load_config(config_path);
  if (seed) config.seed = *seed;
  if (!out) out = config.output;
  if (!out) out = "runs/" + to_string(config.task) + "-" + std::to_string(config.seed);
  const RunResult result = run_experiment(config, *out);
  std::cout << result.evaluation.dump(2) << "\n";
  std::cerr << "wrote " << *out << "\n";
  return 0;
}

int cmd_ua_demo(const std::optional<std::string>& config_path, std::optional<std::uint64_t> seed,
                std::optional<std::string> out) {
  ExperimentConfig config;
  config.task = TaskKind::kUaDemo;
  if (config_path) {
    config = load_config(*config_path);
    if (config.task != TaskKind::kUaDemo) throw ConfigError("task: ua-demo needs task 'ua_demo'");
  }
  if (seed) config.seed = *seed;
  if (!out) out = config.output;
  const RunResult result = run_experiment(config, out ? fs::path(*out) : fs::path());
  std::cout << result.evaluation.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, const std::string& filter, const std::optional<std::string>& out) {
  auto cases = gradcheck_catalogue(seed);
  if (!filter.empty()) {
    std::erase_if(cases, [&](const GradCheckCase& c) { return c.name.find(filter) == std::string::npos; });
    if (cases.empty()) throw ConfigError("filter: no check matches '" + filter + "'");
  }
  ad::GradCheckOptions options;
  options.tolerance = tolerance;
  const SuiteReport report = run_gradcheck_suite(cases, options);
  nlohmann::json j = report.to_json();
  // A filtered sweep is judged on its own checks only.
  if (!filter.empty()) j["pass"] = report.failures() == 0;
  j["tolerance"] = tolerance;
  emit(out, "gradcheck.json", j.dump(2) + "\n");
  for (const auto& c : report.checks)
    if (!c.pass) std::cerr << "FAIL " << c.name << " max_rel_err=" << c.max_rel_err << "\n";
  std::cerr << report.checks.size() << " checks, " << report.failures() << " failed, " << report.covered.size()
            << " primitives covered, " << report.uncovered.size() << " uncovered\n";
  return j["pass"].get<bool>() ? 0 : kNumeric;
}

int cmd_bench(const std::optional<std::string>& config_path, const std::string& kind, std::optional<std::uint64_t> seed,
              const std::optional<std::string>& out) {
  BenchOptions options;
  if (config_path) {
    const nlohmann::json root = read_json(*config_path);
    if (!root.is_object()) throw ConfigError("bench: expected a JSON object");
    for (const auto& [key, value] : root.items())
      if (key != "sizes" && key != "repeats" && key != "chunk" && key != "tolerance" && key != "kind")
        throw ConfigError("bench." + key + ": unknown key");
    const Block block(root, "bench");
    options.sizes = block.integers("sizes", options.sizes, 1);
    options.repeats = block.integer("repeats", options.repeats, 1);
    options.chunk = block.integer("chunk", options.chunk, 1);
    options.tolerance = block.positive("tolerance", options.tolerance);
    if (block.has("kind")) options.kinds = {block.text("kind", "")};
  }
  if (kind != "all") options.kinds = {kind};
  if (seed) options.seed = *seed;
  for (const auto& k : options.kinds)
    if (k != "attention" && k != "scan") throw ConfigError("bench.kind: expected attention, scan or all");
  emit(out, "bench.csv", bench_csv(run_bench(options)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"difflab: training, generation, gradient checks, kernel benchmarks and the UA construction"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> config_opt;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  auto* train = app.add_subcommand("train", "Train the configured task and write run artifacts");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Run directory");

  std::string model_dir, prompt, mode = "greedy";
  GenerateOptions gen;
  std::uint64_t gen_seed = 0;
  auto* generate = app.add_subcommand("generate", "Generate text from a trained char_lm run");
  generate->add_option("--model", model_dir, "Run directory of a char_lm training run")->required();
  generate->add_option("--prompt", prompt, "Prompt text");
  generate->add_option("--mode", mode, "greedy, sample or beam");
  generate->add_option("--max-len", gen.max_len, "Characters to generate")->check(CLI::PositiveNumber);
  generate->add_option("--temperature", gen.temperature, "Sampling temperature")->check(CLI::PositiveNumber);
  generate->add_option("--beam", gen.beam, "Beam width")->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen_seed, "Sampling seed");

  std::uint64_t check_seed = 0;
  double tolerance = 1e-6;
  std::string filter;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and layer");
  gradcheck->add_option("--seed", check_seed, "Seed for probe points");
  gradcheck->add_option("--tolerance", tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
  gradcheck->add_option("--filter", filter, "Only checks whose name contains this text");
  gradcheck->add_option("--out", out, "Directory for gradcheck.json");

  std::string bench_kind = "all";
  auto* bench = app.add_subcommand("bench", "Time naive vs chunked attention and sequential vs parallel scan");
  bench->add_option("--config", config_opt, "JSON with sizes, repeats, chunk, tolerance, kind");
  bench->add_option("--kind", bench_kind, "attention, scan or all");
  bench->add_option("--seed", seed, "Input seed");
  bench->add_option("--out", out, "Directory for bench.csv");

  auto* ua = app.add_subcommand("ua-demo", "Build the binned sigmoid approximation of a 1D function");
  ua->add_option("--config", config_opt, "Optional ua_demo config");
  ua->add_option("--seed", seed, "Override the config seed");
  ua->add_option("--out", out, "Run directory for ua_curve.csv and evaluation.json");

  std::string run_dir;
  auto* exporter = app.add_subcommand("export", "Long-format plot data from a run directory");
  exporter->add_option("--run", run_dir, "Run directory")->required();
  exporter->add_option("--out", out, "Directory for plotdata.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidation;
  }

  try {
    if (*train) return cmd_train(config_path, seed, out);
    if (*generate) {
      gen.mode = decode_mode_from_string(mode);
      gen.seed = gen_seed;
      const LoadedCharModel loaded = load_char_model(model_dir);
      std::cout << generate_text(loaded, prompt, gen) << "\n";
      return 0;
    }
    if (*gradcheck) return cmd_gradcheck(check_seed, tolerance, filter, out);
    if (*bench) return cmd_bench(config_opt, bench_kind, seed, out);
    if (*ua) return cmd_ua_demo(config_opt, seed, out);
    if (*exporter) {
      emit(out, "plotdata.csv", export_run(run_dir));
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric check failed: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kValidation;
}
