#include "difflab/optim/stats.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "difflab/errors.hpp"

namespace difflab::optim {

CalibrationReport calibration(const std::vector<double>& confidence, const std::vector<bool>& correct, Index bins) {
  if (confidence.size() != correct.size())
    throw DimensionError("calibration: " + std::to_string(confidence.size()) + " confidences but " +
                         std::to_string(correct.size()) + " outcomes");
  if (bins < 1) throw DomainError("calibration: need at least one bin");
  CalibrationReport report;
  report.bins.resize(static_cast<std::size_t>(bins));
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw DomainError("calibration: confidence " + std::to_string(c) + " outside [0, 1]");
    const auto b = std::min(static_cast<Index>(std::floor(c * static_cast<double>(bins))), bins - 1);
    auto& bin = report.bins[static_cast<std::size_t>(b)];
    ++bin.count;
    bin.confidence += c;
    bin.accuracy += correct[i] ? 1.0 : 0.0;
  }
  const auto n = static_cast<double>(confidence.size());
  for (auto& bin : report.bins) {
    if (bin.count == 0) continue;
    bin.confidence /= static_cast<double>(bin.count);
    bin.accuracy /= static_cast<double>(bin.count);
    report.ece += static_cast<double>(bin.count) / n * std::abs(bin.accuracy - bin.confidence);
  }
  return report;
}

namespace {

std::vector<double> true_class_scores(const Tensor& scores, const std::vector<Index>& labels) {
  if (scores.rank() != 2) throw DimensionError("conformal scores must be (n, m)");
  if (scores.dim(0) != static_cast<Index>(labels.size()))
    throw DimensionError("conformal: " + std::to_string(scores.dim(0)) + " score rows but " +
                         std::to_string(labels.size()) + " labels");
  std::vector<double> s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Index y = labels[i];
    if (y < 0 || y >= scores.dim(1)) throw DimensionError("class index " + std::to_string(y) + " out of range");
    s.push_back(scores(static_cast<Index>(i), y));
  }
  return s;
}

}  // namespace

double conformal_threshold(const Tensor& scores, const std::vector<Index>& labels, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("conformal: alpha must lie in (0, 1]");
  std::vector<double> s = true_class_scores(scores, labels);
  if (s.empty()) throw ContractError("conformal: empty calibration set");
  const auto n = static_cast<Index>(s.size());
  const auto need = static_cast<Index>(std::ceil((1.0 - alpha) * static_cast<double>(n) - 1e-12));
  if (need <= 0) return *std::max_element(s.begin(), s.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  double best = 0.0;
  for (Index k = need; k < n; ++k) {
    const double g = s[static_cast<std::size_t>(k)];
    Index above = 0;
    while (above < n && s[static_cast<std::size_t>(above)] > g) ++above;
    if (above >= need && g > best) best = g;
  }
  return best;
}

std::vector<Index> prediction_set(const Tensor& probabilities, double gamma) {
  std::vector<Index> out;
  for (Index i = 0; i < probabilities.size(); ++i)
    if (probabilities[i] > gamma) out.push_back(i);
  return out;
}

double coverage(const Tensor& scores, const std::vector<Index>& labels, double gamma) {
  const auto s = true_class_scores(scores, labels);
  if (s.empty()) return 0.0;
  const auto hits = std::count_if(s.begin(), s.end(), [gamma](double v) { return v > gamma; });
  return static_cast<double>(hits) / static_cast<double>(s.size());
}

double fit_bernoulli(const std::vector<double>& samples) {
  if (samples.empty()) throw ContractError("bernoulli fit needs at least one sample");
  double positives = 0.0;
  for (double v : samples) {
    if (v != 0.0 && v != 1.0) throw DomainError("bernoulli samples must be 0 or 1");
    positives += v;
  }
  return positives / static_cast<double>(samples.size());
}

GaussianFit fit_gaussian(const std::vector<double>& samples, bool bessel) {
  const auto n = static_cast<double>(samples.size());
  if (samples.empty()) throw ContractError("gaussian fit needs at least one sample");
  if (bessel && samples.size() < 2) throw ContractError("Bessel-corrected variance needs at least two samples");
  GaussianFit fit;
  for (double v : samples) fit.mean += v;
  fit.mean /= n;
  for (double v : samples) fit.variance += (v - fit.mean) * (v - fit.mean);
  fit.variance /= bessel ? n - 1.0 : n;
  return fit;
}

namespace {

struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Design design(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2) throw DimensionError("least squares expects an (n, d) design matrix");
  if (y.rank() == 0 || y.dim(0) != x.dim(0) || y.size() != x.dim(0))
    throw DimensionError("least squares targets " + to_string(y.shape()) + " do not match " + to_string(x.shape()));
  return {x.matrix(), Eigen::Map<const Eigen::VectorXd>(y.data(), y.size())};
}

Tensor weights_tensor(const Eigen::VectorXd& w) {
  Tensor out({w.size()});
  Eigen::Map<Eigen::VectorXd>(out.data(), w.size()) = w;
  return out;
}

}  // namespace

Tensor least_squares(const Tensor& x, const Tensor& y, double lambda) {
  if (lambda < 0.0) throw DomainError("least squares: lambda must be non-negative");
  const Design d = design(x, y);
  Eigen::MatrixXd a = d.x.transpose() * d.x;
  a.diagonal().array() += lambda;
  const Eigen::VectorXd eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues();
  const double rcond = eig.size() == 0 ? 1.0 : eig.minCoeff() / eig.maxCoeff();
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !(rcond > 1e-12))
    throw NumericError("least squares: X^T X + lambda I is singular or ill-conditioned (rcond " +
                       std::to_string(rcond) + "); the columns may be collinear, use lambda > 0");
  return weights_tensor(ldlt.solve(d.x.transpose() * d.y));
}

DescentTrace least_squares_gd(const Tensor& x, const Tensor& y, double lambda, Index steps, double step) {
  const Design d = design(x, y);
  Eigen::MatrixXd h = d.x.transpose() * d.x;
  h.diagonal().array() += lambda;
  if (step <= 0.0) {
    const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    step = 1.0 / (2.0 * top);
  }
  const Eigen::VectorXd xty = d.x.transpose() * d.y;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d.x.cols());
  DescentTrace trace;
  auto loss = [&](const Eigen::VectorXd& v) { return (d.x * v - d.y).squaredNorm() + lambda * v.squaredNorm(); };
  trace.losses.push_back(loss(w));
  for (Index t = 0; t < steps; ++t) {
    w -= step * 2.0 * (h * w - xty);
    trace.losses.push_back(loss(w));
  }
  trace.w = weights_tensor(w);
  return trace;
}

}  // namespace difflab::optim
