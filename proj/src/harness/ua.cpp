#include "difflab/harness/ua.hpp"

#include <cmath>

#include "difflab/errors.hpp"

namespace difflab::harness {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double UAModel::operator()(double x) const {
  double y = 0.0;
  for (std::size_t u = 0; u < amplitude.size(); ++u) y += amplitude[u] * stable_sigmoid(spec.slope * (x - shift[u]));
  return y;
}

Tensor UAModel::operator()(const Tensor& x) const {
  Tensor y(x.shape());
  for (Index i = 0; i < x.size(); ++i) y[i] = (*this)(x[i]);
  return y;
}

double bin_average(const std::function<double(double)>& g, double a, double b, Index points) {
  if (points < 1) throw DomainError("quadrature needs at least one point");
  const double h = (b - a) / static_cast<double>(points);
  double total = 0.0;
  for (Index k = 0; k < points; ++k) total += g(a + (static_cast<double>(k) + 0.5) * h);
  return total / static_cast<double>(points);
}

UAModel ua_construct(const std::function<double(double)>& g, const UABinSpec& spec) {
  if (spec.bins < 1) throw DomainError("ua: need at least one bin");
  if (!(spec.hi > spec.lo)) throw DomainError("ua: interval must have hi > lo");
  if (!(spec.slope > 0.0)) throw DomainError("ua: slope must be positive");
  UAModel model;
  model.spec = spec;
  const double delta = spec.width();
  for (Index i = 0; i < spec.bins; ++i) {
    const double c = spec.center(i);
    const double gi = bin_average(g, c - delta / 2.0, c + delta / 2.0);
    model.bin_value.push_back(gi);
    model.amplitude.push_back(gi);
    model.shift.push_back(c - delta / 2.0);
    model.amplitude.push_back(-gi);
    model.shift.push_back(c + delta / 2.0);
  }
  return model;
}

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; }

std::vector<double> linspace(double lo, double hi, Index n) {
  if (n < 2) return {lo};
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return xs;
}

double ua_mse(const UAModel& model, const std::function<double(double)>& g, const std::vector<double>& grid) {
  if (grid.empty()) throw DomainError("ua: empty evaluation grid");
  double total = 0.0;
  for (double x : grid) {
    const double e = model(x) - g(x);
    total += e * e;
  }
  return total / static_cast<double>(grid.size());
}

}  // namespace difflab::harness
