#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difflab/autodiff/tape.hpp"

namespace difflab::ad {

struct GradCheckOptions {
  double step = 1e-5;            // central-difference half step
  double tolerance = 1e-6;       // max relative error allowed
  double absolute_floor = 1e-8;  // entries closer than this count as exact
};

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Index entries_checked = 0;
  bool numeric_failure = false;  // NaN/Inf in either gradient estimate
  bool pass = false;

  nlohmann::json to_json() const;
};

using LossFn = std::function<Var(Tape&)>;

/// Compares backward() gradients of a scalar loss against central differences
/// for every entry of every listed parameter. The loss function must be
/// deterministic: it is re-recorded on a fresh tape for each probe.
///
/// Per-entry error is |g - n| / max(|g|, |n|), taken as zero when |g - n| is
/// below the absolute floor.
GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {}, std::string name = {});

/// Relative error as used by grad_check, exposed for tests.
double relative_error(double analytic, double numeric, double absolute_floor);

}  // namespace difflab::ad
