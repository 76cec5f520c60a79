#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/harness/config.hpp"
#include "difflab/harness/text.hpp"

namespace difflab::harness {

struct MetricRow {
  Index epoch = 0;
  Index step = 0;
  double loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Columns epoch,step,loss,val_metric,lr,grad_norm with round-trip precision.
std::string metrics_csv(const std::vector<MetricRow>& rows);

struct RunResult {
  std::vector<MetricRow> metrics;
  nlohmann::json evaluation = nlohmann::json::object();
};

/// Trains (or builds) the configured model in memory. When out_dir is given,
/// writes config.json, metrics.csv, evaluation.json and any task artifacts
/// (checkpoint/, ua_curve.csv, reliability.csv) into it.
RunResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir = {});

struct XorOutcome {
  double accuracy = 0.0;
  Index steps_to_perfect = -1;  // first step with 4/4, -1 if never
  double final_loss = 0.0;
};
/// Logistic regression (hidden = 0) or a one-hidden-layer ReLU MLP on the
/// four XOR points, trained full-batch by Adam.
XorOutcome train_xor(Index hidden, std::uint64_t seed, Index steps, double lr = 0.05);

/// Loads a char_lm run directory (config.json and checkpoint/) for generation.
struct LoadedCharModel {
  CharConvLM model;
  CharTokenizer tokenizer;
};
LoadedCharModel load_char_model(const std::filesystem::path& run_dir);

enum class DecodeMode { kGreedy, kSample, kBeam };
DecodeMode decode_mode_from_string(const std::string& name);

struct GenerateOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  Index max_len = 64;
  double temperature = 1.0;
  Index beam = 3;
  std::uint64_t seed = 0;
};
/// BOS + prompt, then max_len generated characters; returns the generated text only.
std::string generate_text(const LoadedCharModel& loaded, const std::string& prompt, const GenerateOptions& options);

}  // namespace difflab::harness
