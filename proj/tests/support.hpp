#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "difflab/autodiff/tape.hpp"
#include "difflab/kernels.hpp"
#include "difflab/random.hpp"

namespace testing {

using difflab::Index;
using difflab::Shape;
using difflab::Tensor;

inline Tensor random_tensor(difflab::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

inline double max_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  return difflab::max_abs_diff(a, b);
}

inline Tensor triple_loop_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (Index i = 0; i < a.dim(0); ++i)
    for (Index j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (Index k = 0; k < a.dim(1); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

/// Central-difference Jacobian of f at x: (out.size, x.size), h = 1e-5.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                        double h = 1e-5) {
  const Tensor y0 = f(x);
  Eigen::MatrixXd j(y0.size(), x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Tensor up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const Tensor fu = f(up), fd = f(down);
    for (Index r = 0; r < y0.size(); ++r) j(r, i) = (fu[r] - fd[r]) / (2 * h);
  }
  return j;
}

/// Evaluates a tape-recorded function on a fresh tape.
inline Tensor eval(const difflab::ad::UnaryFn& f, const Tensor& x) {
  difflab::ad::Tape tape;
  return f(tape.input(x)).value();
}

/// A random permutation of 0..n-1.
inline std::vector<Index> permutation(difflab::Rng& rng, Index n) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng.engine());
  return p;
}

/// Rows of x reordered so that out[i] = x[p[i]].
inline Tensor permute_rows(const Tensor& x, const std::vector<Index>& p) {
  Tensor out(x.shape());
  const Index w = x.size() / x.dim(0);
  for (std::size_t i = 0; i < p.size(); ++i)
    std::copy_n(x.data() + p[i] * w, w, out.data() + static_cast<Index>(i) * w);
  return out;
}

}  // namespace testing
