#pragma once

#include <vector>

#include "difflab/tensor.hpp"

namespace difflab::optim {

struct CalibrationBin {
  Index count = 0;
  double confidence = 0.0;  // mean confidence p_i
  double accuracy = 0.0;    // mean correctness a_i
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
};

/// Equal-width bins on [0, 1]; ECE = sum_i |B_i| / n |a_i - p_i|.
CalibrationReport calibration(const std::vector<double>& confidence, const std::vector<bool>& correct, Index bins = 10);

/// Largest gamma in {0} and the scores such that the true class satisfies
/// f(x)_y > gamma on at least ceil((1 - alpha) n) examples. scores is (n, m).
double conformal_threshold(const Tensor& scores, const std::vector<Index>& labels, double alpha);
/// { i : f(x)_i > gamma }
std::vector<Index> prediction_set(const Tensor& probabilities, double gamma);
/// Fraction of rows whose true class is in its prediction set.
double coverage(const Tensor& scores, const std::vector<Index>& labels, double gamma);

struct GaussianFit {
  double mean = 0.0;
  double variance = 0.0;
};
double fit_bernoulli(const std::vector<double>& samples);
/// Variance normalized by n, or by n - 1 with Bessel's correction.
GaussianFit fit_gaussian(const std::vector<double>& samples, bool bessel = false);

/// Solves (X^T X + lambda I) w = X^T y by a Cholesky-type factorization.
/// An ill-conditioned system raises NumericError suggesting lambda > 0.
Tensor least_squares(const Tensor& x, const Tensor& y, double lambda = 0.0);

struct DescentTrace {
  Tensor w;
  std::vector<double> losses;
};
/// Gradient descent on ||X w - y||^2 + lambda ||w||^2 from w = 0. A
/// non-positive step uses 1 / L with L the largest curvature.
DescentTrace least_squares_gd(const Tensor& x, const Tensor& y, double lambda, Index steps, double step = 0.0);

}  // namespace difflab::optim
