#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/tensor.hpp"

namespace difflab::harness {

enum class TaskKind { kXor, kRegression, kCharLm, kNodeClassify, kGraphClassify, kUaDemo };
TaskKind task_kind_from_string(const std::string& name);
std::string to_string(TaskKind kind);

/// Top-level keys: task, seed, model, optimizer, data, schedule, output.
struct ExperimentConfig {
  TaskKind task = TaskKind::kXor;
  std::uint64_t seed = 0;
  nlohmann::json model = nlohmann::json::object();
  nlohmann::json optimizer = nlohmann::json::object();
  nlohmann::json data = nlohmann::json::object();
  nlohmann::json schedule = nlohmann::json::object();
  std::optional<std::string> output;

  nlohmann::json to_json() const;
};

/// Validation failures raise ConfigError whose message starts with the field path.
ExperimentConfig parse_config(const nlohmann::json& root);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Typed access to one block of the config with path-prefixed errors.
class Block {
 public:
  Block(const nlohmann::json& json, std::string path);
  bool has(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  double positive(const std::string& key, double fallback) const;
  Index integer(const std::string& key, Index fallback, Index minimum = 0) const;
  std::string text(const std::string& key, const std::string& fallback) const;
  std::vector<Index> integers(const std::string& key, const std::vector<Index>& fallback, Index minimum = 0) const;
  const nlohmann::json& json() const { return json_; }
  std::string field(const std::string& key) const { return path_ + "." + key; }

 private:
  const nlohmann::json& json_;
  std::string path_;
};

}  // namespace difflab::harness
