#include "difflab/harness/config.hpp"

#include <fstream>
#include <set>

#include "difflab/errors.hpp"

namespace difflab::harness {

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "xor") return TaskKind::kXor;
  if (name == "regression") return TaskKind::kRegression;
  if (name == "char_lm") return TaskKind::kCharLm;
  if (name == "node_classify") return TaskKind::kNodeClassify;
  if (name == "graph_classify") return TaskKind::kGraphClassify;
  if (name == "ua_demo") return TaskKind::kUaDemo;
  throw ConfigError("task: unknown task '" + name + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kXor: return "xor";
    case TaskKind::kRegression: return "regression";
    case TaskKind::kCharLm: return "char_lm";
    case TaskKind::kNodeClassify: return "node_classify";
    case TaskKind::kGraphClassify: return "graph_classify";
    case TaskKind::kUaDemo: return "ua_demo";
  }
  return "?";
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j{{"task", to_string(task)}, {"seed", seed},         {"model", model},
                   {"optimizer", optimizer},  {"data", data},         {"schedule", schedule}};
  if (output) j["output"] = *output;
  return j;
}

ExperimentConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("<root>: expected a JSON object");
  static const std::set<std::string> known{"task", "seed", "model", "optimizer", "data", "schedule", "output"};
  for (const auto& [key, value] : root.items())
    if (!known.contains(key)) throw ConfigError(key + ": unknown key");
  ExperimentConfig c;
  if (!root.contains("task")) throw ConfigError("task: missing");
  if (!root["task"].is_string()) throw ConfigError("task: expected a string");
  c.task = task_kind_from_string(root["task"].get<std::string>());
  if (root.contains("seed")) {
    const auto& s = root["seed"];
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
      throw ConfigError("seed: expected a non-negative integer");
    c.seed = s.get<std::uint64_t>();
  }
  for (const char* key : {"model", "optimizer", "data", "schedule"}) {
    if (!root.contains(key)) continue;
    if (!root[key].is_object()) throw ConfigError(std::string(key) + ": expected an object");
  }
  if (root.contains("model")) c.model = root["model"];
  if (root.contains("optimizer")) c.optimizer = root["optimizer"];
  if (root.contains("data")) c.data = root["data"];
  if (root.contains("schedule")) c.schedule = root["schedule"];
  if (root.contains("output")) {
    if (!root["output"].is_string()) throw ConfigError("output: expected a string");
    c.output = root["output"].get<std::string>();
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<root>: cannot open config " + path.string());
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("<root>: malformed JSON: ") + e.what());
  }
  return parse_config(root);
}

Block::Block(const nlohmann::json& json, std::string path) : json_(json), path_(std::move(path)) {}

bool Block::has(const std::string& key) const { return json_.is_object() && json_.contains(key); }

double Block::number(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto& v = json_.at(key);
  if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
  return v.get<double>();
}

double Block::positive(const std::string& key, double fallback) const {
  const double v = number(key, fallback);
  if (!(v > 0.0)) throw ConfigError(field(key) + ": must be positive");
  return v;
}

Index Block::integer(const std::string& key, Index fallback, Index minimum) const {
  if (!has(key)) return fallback;
  const auto& v = json_.at(key);
  if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
  const auto i = v.get<Index>();
  if (i < minimum) throw ConfigError(field(key) + ": must be at least " + std::to_string(minimum));
  return i;
}

std::string Block::text(const std::string& key, const std::string& fallback) const {
  if (!has(key)) return fallback;
  const auto& v = json_.at(key);
  if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
  return v.get<std::string>();
}

std::vector<Index> Block::integers(const std::string& key, const std::vector<Index>& fallback, Index minimum) const {
  if (!has(key)) return fallback;
  const auto& v = json_.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError(field(key) + ": expected a non-empty array of integers");
  std::vector<Index> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer() || v[i].get<Index>() < minimum)
      throw ConfigError(field(key) + "[" + std::to_string(i) + "]: expected an integer >= " + std::to_string(minimum));
    out.push_back(v[i].get<Index>());
  }
  return out;
}

}  // namespace difflab::harness
