#include "difflab/harness/export.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "difflab/errors.hpp"

namespace difflab::harness {

namespace fs = std::filesystem;

namespace {

using Table = std::vector<std::vector<std::string>>;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("run: cannot read " + path.string());
  Table rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split(line));
  if (rows.empty()) throw ConfigError("run: empty file " + path.string());
  for (const auto& row : rows)
    if (row.size() != rows.front().size()) throw ConfigError("run: ragged row in " + path.string());
  return rows;
}

std::size_t column(const Table& t, const std::string& name, const fs::path& path) {
  for (std::size_t i = 0; i < t.front().size(); ++i)
    if (t.front()[i] == name) return i;
  throw ConfigError("run: " + path.string() + " lacks column " + name);
}

}  // namespace

std::string export_run(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw ConfigError("run: no such directory " + run_dir.string());
  std::string out = "series,step,value\n";
  auto emit = [&out](const std::string& series, const std::string& x, const std::string& value) {
    out += series + "," + x + "," + value + "\n";
  };

  const fs::path metrics_path = run_dir / "metrics.csv";
  const Table metrics = read_csv(metrics_path);
  const std::size_t step = column(metrics, "step", metrics_path);
  for (const std::string name : {"loss", "val_metric", "lr", "grad_norm"}) {
    const std::size_t col = column(metrics, name, metrics_path);
    for (std::size_t r = 1; r < metrics.size(); ++r) emit(name, metrics[r][step], metrics[r][col]);
  }

  const fs::path ua_path = run_dir / "ua_curve.csv";
  if (fs::exists(ua_path)) {
    const Table ua = read_csv(ua_path);
    const std::size_t m = column(ua, "m", ua_path), x = column(ua, "x", ua_path);
    const std::size_t g = column(ua, "g", ua_path), f = column(ua, "f", ua_path);
    std::string first_m = ua.size() > 1 ? ua[1][m] : "";
    for (std::size_t r = 1; r < ua.size(); ++r) {
      if (ua[r][m] == first_m) emit("ua.g", ua[r][x], ua[r][g]);
      emit("ua.f.m" + ua[r][m], ua[r][x], ua[r][f]);
    }
  }

  const fs::path rel_path = run_dir / "reliability.csv";
  if (fs::exists(rel_path)) {
    const Table rel = read_csv(rel_path);
    const std::size_t lo = column(rel, "lower", rel_path), hi = column(rel, "upper", rel_path);
    const std::size_t count = column(rel, "count", rel_path);
    const std::size_t acc = column(rel, "accuracy", rel_path), conf = column(rel, "confidence", rel_path);
    for (std::size_t r = 1; r < rel.size(); ++r) {
      if (rel[r][count] == "0") continue;
      char centre[64];
      std::snprintf(centre, sizeof centre, "%.17g", 0.5 * (std::stod(rel[r][lo]) + std::stod(rel[r][hi])));
      emit("reliability.accuracy", centre, rel[r][acc]);
      emit("reliability.confidence", centre, rel[r][conf]);
    }
  }
  return out;
}

}  // namespace difflab::harness
