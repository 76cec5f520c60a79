#pragma once

#include <functional>
#include <vector>

#include "difflab/tensor.hpp"

namespace difflab::harness {

struct UABinSpec {
  Index bins = 10;
  double lo = 0.0;
  double hi = 1.0;
  double slope = 1e4;
  double width() const { return (hi - lo) / static_cast<double>(bins); }
  /// lo + (i / m)(hi - lo), i = 0..m-1
  double center(Index i) const { return lo + static_cast<double>(i) * width(); }
};

/// One hidden layer of 2m sigmoid units a sigma(w (x - s)); the output is the
/// sum of the units (no output bias).
struct UAModel {
  UABinSpec spec;
  std::vector<double> amplitude;  // a, 2m
  std::vector<double> shift;      // s, 2m
  std::vector<double> bin_value;  // g_i, m

  double operator()(double x) const;
  Tensor operator()(const Tensor& x) const;
  Index hidden_units() const { return static_cast<Index>(amplitude.size()); }
};

/// Mean of g over [a, b] by midpoint quadrature.
double bin_average(const std::function<double(double)>& g, double a, double b, Index points = 128);

/// Sets the weights analytically: bin i contributes g_i sigma(w (x - c_i + D/2))
/// - g_i sigma(w (x - c_i - D/2)) with g_i the bin average of g.
UAModel ua_construct(const std::function<double(double)>& g, const UABinSpec& spec);

/// sin(x) / x with the removable singularity filled in.
double sinc(double x);

/// n equally spaced points on [lo, hi], both ends included.
std::vector<double> linspace(double lo, double hi, Index n);
/// Mean squared error of the model against g on the given grid.
double ua_mse(const UAModel& model, const std::function<double(double)>& g, const std::vector<double>& grid);

}  // namespace difflab::harness
