#include "difflab/autodiff/gradcheck.hpp"

#include <cmath>

namespace difflab::ad {

nlohmann::json GradCheckReport::to_json() const {
  return {{"name", name},
          {"max_rel_err", max_rel_err},
          {"max_abs_err", max_abs_err},
          {"entries_checked", entries_checked},
          {"numeric_failure", numeric_failure},
          {"pass", pass}};
}

double relative_error(double analytic, double numeric, double absolute_floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= absolute_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

namespace {

double evaluate(const LossFn& loss) {
  Tape tape;
  Var out = loss(tape);
  if (out.value().size() != 1) throw ContractError("grad_check: loss must be scalar, got " + to_string(out.shape()));
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params, const GradCheckOptions& options,
                           std::string name) {
  GradCheckReport report;
  report.name = std::move(name);

  GradientStore grads;
  {
    Tape tape;
    for (Parameter* p : params) tape.param(*p);
    Var out = loss(tape);
    grads = backward(tape, out);
  }

  for (Parameter* p : params) {
    const Tensor analytic = grads.contains(*p) ? grads[*p] : Tensor::zeros(p->shape());
    Tensor& value = p->value();
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = evaluate(loss);
      value[i] = saved - options.step;
      const double down = evaluate(loss);
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      ++report.entries_checked;
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        report.numeric_failure = true;
        continue;
      }
      report.max_abs_err = std::max(report.max_abs_err, std::abs(analytic[i] - numeric));
      report.max_rel_err = std::max(report.max_rel_err, relative_error(analytic[i], numeric, options.absolute_floor));
    }
  }
  report.pass = !report.numeric_failure && report.max_rel_err <= options.tolerance;
  return report;
}

}  // namespace difflab::ad
