#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/autodiff/gradcheck.hpp"

namespace difflab::harness {

/// One named gradient check. The loss owns whatever layers it needs; params
/// point into that state and stay valid while the case is alive.
struct GradCheckCase {
  std::string name;
  ad::LossFn loss;
  std::vector<ad::Parameter*> params;
};

/// Every registered primitive plus the library's layers, with probe points
/// kept away from kinks and ties.
std::vector<GradCheckCase> gradcheck_catalogue(std::uint64_t seed = 0);

struct SuiteReport {
  std::vector<ad::GradCheckReport> checks;
  std::set<std::string> covered;
  std::vector<std::string> uncovered;  // registered primitives no case reached
  bool pass = false;

  Index failures() const;
  nlohmann::json to_json() const;
};

/// Runs the cases, records which primitives each loss puts on the tape, and
/// passes only when every check passes and every registered primitive is covered.
SuiteReport run_gradcheck_suite(const std::vector<GradCheckCase>& cases, const ad::GradCheckOptions& options = {});

}  // namespace difflab::harness
