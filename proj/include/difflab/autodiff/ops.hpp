#pragma once

#include <vector>

#include "difflab/autodiff/tape.hpp"
#include "difflab/kernels.hpp"

// Differentiable tensor operations. Each call records one primitive on the
// tape that owns its first operand.
namespace difflab::ad {

// Broadcasting arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add(Var a, const Tensor& constant);
Var mul(Var a, const Tensor& constant);
Var scale(Var a, double factor);
Var shift(Var a, double offset);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return shift(a, s); }
inline Var operator-(Var a, double s) { return shift(a, -s); }
inline Var operator-(double s, Var a) { return shift(scale(a, -1.0), s); }

// Elementwise maps.
Var neg(Var x);
Var exp(Var x);
Var log(Var x);
Var abs(Var x);    // subgradient 0 at 0
Var sqrt(Var x);
Var square(Var x);
Var pow(Var x, double exponent);

// Activations.
Var relu(Var x);  // derivative 0 at 0
Var leaky_relu(Var x, double slope = 0.01);
Var prelu(Var x, Var slope);  // slope broadcast against x
Var sigmoid(Var x);
Var tanh(Var x);
Var softplus(Var x);
Var elu(Var x, double alpha = 1.0);
Var gelu(Var x);  // tanh approximation of x * Phi(x)
Var silu(Var x);

// Linear algebra.
Var matmul(Var a, Var b);
Var batched_matmul(Var a, Var b);

// Reductions (axes dropped unless keep_dims).
Var sum(Var x, std::vector<Index> axes, bool keep_dims = false);
Var sum(Var x);
Var mean(Var x, std::vector<Index> axes, bool keep_dims = false);
Var mean(Var x);
Var max(Var x, std::vector<Index> axes, bool keep_dims = false);  // adjoint routed to the first argmax

// Last-axis softmax family.
Var softmax(Var x, double temperature = 1.0);
Var logsumexp(Var x);

// Layout.
Var reshape(Var x, Shape shape);
Var transpose(Var x, std::vector<Index> perm);
Var transpose(Var x);
Var concat(const std::vector<Var>& parts, Index axis);
Var slice(Var x, Index axis, Index start, Index stop);

// Indexed row operations on rank-2 inputs.
/// out[r] = x[index[r]]; adjoint scatters additively.
Var gather_rows(Var x, std::vector<Index> index);
enum class Scatter { kSum, kMean, kMax };
/// out[g] = reduce over rows r with index[r] == g, for g in [0, groups).
/// Empty groups produce zeros for sum; mean/max of an empty group throw.
Var scatter_rows(Var x, std::vector<Index> index, Index groups, Scatter kind);
/// Softmax of a score vector (m) within segments given by `segment` ids.
Var segment_softmax(Var scores, std::vector<Index> segment, Index segments);

/// Primitive names defined in this file (used by the registry).
std::vector<std::string> core_primitive_names();

}  // namespace difflab::ad
