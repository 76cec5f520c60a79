#include "difflab/recurrent/recurrent.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "difflab/autodiff/ops.hpp"
#include "difflab/conv/conv.hpp"
#include "difflab/kernels.hpp"

namespace difflab::rnn {

namespace {

ad::Parameter fan_in_param(std::string name, Shape shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<Index>(1, fan_in)));
  return ad::Parameter(std::move(name), rng.uniform_tensor(std::move(shape), -bound, bound));
}

// x W^T for row batches x and a column-oriented weight W.
ad::Var project(ad::Var x, ad::Var w) { return ad::matmul(x, ad::transpose(w)); }

void check_step(const Cell& cell, const ad::Var& s, const ad::Var& x) {
  if (s.value().rank() != 2 || s.dim(1) != cell.state_width())
    throw DimensionError("cell: state " + to_string(s.shape()) + " does not have width " +
                         std::to_string(cell.state_width()));
  if (x.value().rank() != 2 || x.dim(1) != cell.input_width() || x.dim(0) != s.dim(0))
    throw DimensionError("cell: input " + to_string(x.shape()) + " does not match width " +
                         std::to_string(cell.input_width()) + " and batch " + std::to_string(s.dim(0)));
}

Eigen::VectorXd row(const Tensor& x, Index i) { return x.rows_view().row(i).transpose(); }

}  // namespace

ElmanCell::ElmanCell(Index state, Index input, Rng& rng, nn::Activation phi)
    : a_(fan_in_param("A", {state, state}, state, rng)),
      b_(fan_in_param("B", {state, input}, input, rng)),
      phi_(phi) {}

ElmanCell::ElmanCell(ad::Parameter a, ad::Parameter b, nn::Activation phi)
    : a_(std::move(a)), b_(std::move(b)), phi_(phi) {
  if (a_.value().rank() != 2 || a_.value().dim(0) != a_.value().dim(1) || b_.value().rank() != 2 ||
      b_.value().dim(0) != a_.value().dim(0))
    throw DimensionError("ElmanCell: A " + to_string(a_.shape()) + " and B " + to_string(b_.shape()) +
                         " are inconsistent");
}

ad::Var ElmanCell::step(ad::Var s, ad::Var x) const {
  check_step(*this, s, x);
  ad::Tape& tape = s.tape();
  return nn::activate(ad::add(project(s, tape.param(a_)), project(x, tape.param(b_))), phi_);
}

LiGRUCell::LiGRUCell(Index state, Index input, Rng& rng, nn::Activation phi)
    : a_(fan_in_param("A", {state, state}, state, rng)),
      b_(fan_in_param("B", {state, input}, input, rng)),
      v_(fan_in_param("V", {state, state}, state, rng)),
      u_(fan_in_param("U", {state, input}, input, rng)),
      gate_bias_("gate_bias", Tensor::zeros({state})),
      phi_(phi) {}

ad::Var LiGRUCell::gate(ad::Var s, ad::Var x) const {
  ad::Tape& tape = s.tape();
  return ad::sigmoid(ad::add(ad::add(project(s, tape.param(v_)), project(x, tape.param(u_))), tape.param(gate_bias_)));
}

ad::Var LiGRUCell::step(ad::Var s, ad::Var x) const {
  check_step(*this, s, x);
  ad::Tape& tape = s.tape();
  ad::Var g = gate(s, x);
  ad::Var candidate = nn::activate(ad::add(project(s, tape.param(a_)), project(x, tape.param(b_))), phi_);
  return ad::add(ad::mul(g, candidate), ad::mul(1.0 - g, s));
}

Readout::Readout(Index out, Index state, Index input, Rng& rng)
    : c(fan_in_param("C", {out, state}, state, rng)), d(fan_in_param("D", {out, input}, input, rng)) {}

ad::Var Readout::operator()(ad::Var states, ad::Var inputs) const {
  ad::Tape& tape = states.tape();
  return ad::add(project(states, tape.param(c)), project(inputs, tape.param(d)));
}

ScanOutput rnn_scan(const Cell& cell, const Readout& readout, ad::Var inputs, bool reverse) {
  if (inputs.value().rank() != 2) throw DimensionError("rnn_scan: inputs must be (t,c), got " + to_string(inputs.shape()));
  const Index t = inputs.dim(0);
  if (t < 1) throw ContractError("rnn_scan: empty sequence");
  ad::Tape& tape = inputs.tape();
  ad::Var s = tape.constant(Tensor::zeros({1, cell.state_width()}));
  std::vector<ad::Var> states(static_cast<std::size_t>(t));
  for (Index k = 0; k < t; ++k) {
    const Index i = reverse ? t - 1 - k : k;
    s = cell.step(s, ad::slice(inputs, 0, i, i + 1));
    states[static_cast<std::size_t>(i)] = s;
  }
  ad::Var all = t == 1 ? states.front() : ad::concat(states, 0);
  return {all, readout(all, inputs)};
}

ScanOutput bidirectional_scan(const Cell& forward, const Readout& forward_readout, const Cell& backward,
                              const Readout& backward_readout, ad::Var inputs) {
  ScanOutput f = rnn_scan(forward, forward_readout, inputs, false);
  ScanOutput b = rnn_scan(backward, backward_readout, inputs, true);
  return {ad::concat({f.states, b.states}, 1), ad::concat({f.outputs, b.outputs}, 1)};
}

// ---------------------------------------------------------------------------

double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(a, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

void check_ssm_input(const Tensor& x, const Eigen::MatrixXd& b) {
  if (x.rank() != 2 || x.dim(1) != b.cols())
    throw DimensionError("ssm: inputs " + to_string(x.shape()) + " do not match B with " + std::to_string(b.cols()) +
                         " columns");
}

}  // namespace

Tensor ssm_states_sequential(const Tensor& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             bool check_stability) {
  check_ssm_input(x, b);
  if (a.rows() != a.cols() || a.rows() != b.rows())
    throw DimensionError("ssm: A must be square with as many rows as B");
  if (check_stability && spectral_radius(a) >= 1.0)
    throw DomainError("ssm: spectral radius " + std::to_string(spectral_radius(a)) + " is not below 1");
  Tensor states({x.dim(0), a.rows()});
  Eigen::VectorXd s = Eigen::VectorXd::Zero(a.rows());
  for (Index i = 0; i < x.dim(0); ++i) {
    s = a * s + b * row(x, i);
    states.rows_view().row(i) = s.transpose();
  }
  return states;
}

Tensor linear_ssm_sequential(const Tensor& x, const LinearSSM& ssm, bool check_stability) {
  const Tensor states = ssm_states_sequential(x, ssm.a, ssm.b, check_stability);
  if (ssm.c.cols() != ssm.a.rows() || ssm.d.cols() != x.dim(1) || ssm.c.rows() != ssm.d.rows())
    throw DimensionError("ssm: readout matrices C and D are inconsistent");
  Tensor y({x.dim(0), ssm.c.rows()});
  y.rows_view() = states.rows_view() * ssm.c.transpose() + x.rows_view() * ssm.d.transpose();
  return y;
}

DenseElement combine(const DenseElement& earlier, const DenseElement& later) {
  return {later.m * earlier.m, later.m * earlier.v + later.v};
}

DiagElement combine(const DiagElement& earlier, const DiagElement& later) {
  return {later.m.cwiseProduct(earlier.m), later.m.cwiseProduct(earlier.v) + later.v};
}

Tensor ssm_parallel_scan(const Tensor& x, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, ScanStats* stats) {
  check_ssm_input(x, b);
  if (a.rows() != a.cols() || a.rows() != b.rows())
    throw DimensionError("ssm: A must be square with as many rows as B");
  std::vector<DenseElement> elems;
  elems.reserve(static_cast<std::size_t>(x.dim(0)));
  for (Index i = 0; i < x.dim(0); ++i) elems.push_back({a, b * row(x, i)});
  const auto prefixes =
      associative_scan(elems, [](const DenseElement& l, const DenseElement& r) { return combine(l, r); }, stats);
  Tensor states({x.dim(0), a.rows()});
  for (Index i = 0; i < x.dim(0); ++i) states.rows_view().row(i) = prefixes[static_cast<std::size_t>(i)].v.transpose();
  return states;
}

Tensor ssm_parallel_scan_diag(const Tensor& x, const Eigen::VectorXd& lambda, const Eigen::MatrixXd& b,
                              ScanStats* stats) {
  check_ssm_input(x, b);
  if (lambda.size() != b.rows()) throw DimensionError("ssm: diagonal length does not match B");
  std::vector<DiagElement> elems;
  elems.reserve(static_cast<std::size_t>(x.dim(0)));
  for (Index i = 0; i < x.dim(0); ++i) elems.push_back({lambda, b * row(x, i)});
  const auto prefixes =
      associative_scan(elems, [](const DiagElement& l, const DiagElement& r) { return combine(l, r); }, stats);
  Tensor states({x.dim(0), lambda.size()});
  for (Index i = 0; i < x.dim(0); ++i) states.rows_view().row(i) = prefixes[static_cast<std::size_t>(i)].v.transpose();
  return states;
}

Tensor ssm_to_conv_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Index t) {
  if (t < 1) throw ContractError("ssm_to_conv_kernel: length must be >= 1");
  if (a.rows() != a.cols() || a.rows() != b.rows())
    throw DimensionError("ssm: A must be square with as many rows as B");
  const Index e = b.rows(), c = b.cols();
  Tensor k({t, e, c});
  Eigen::MatrixXd power_b = b;  // A^j B
  for (Index j = 0; j < t; ++j) {
    const Index slot = t - 1 - j;
    for (Index r = 0; r < e; ++r)
      for (Index q = 0; q < c; ++q) k(slot, r, q) = power_b(r, q);
    power_b = a * power_b;
  }
  return k;
}

Tensor ssm_conv_states(const Tensor& x, const Tensor& kernel) {
  if (kernel.rank() != 3 || x.rank() != 2 || kernel.dim(2) != x.dim(1))
    throw DimensionError("ssm_conv_states: kernel " + to_string(kernel.shape()) + " does not match inputs " +
                         to_string(x.shape()));
  const Index tk = kernel.dim(0), e = kernel.dim(1), c = kernel.dim(2);
  conv::Geometry g;
  g.kw = tk;
  g.pad_left = tk - 1;
  Tensor w({1, tk, c, e});
  for (Index a = 0; a < tk; ++a)
    for (Index q = 0; q < c; ++q)
      for (Index r = 0; r < e; ++r) w(0, a, q, r) = kernel(a, r, q);
  const Tensor out = conv::conv2d_strided(x.reshaped({1, 1, x.dim(0), c}), w, std::nullopt, g);
  return out.reshaped({x.dim(0), e});
}

// ---------------------------------------------------------------------------

namespace {

class DiagScan final : public ad::Primitive {
 public:
  std::string_view name() const override { return "diag_scan"; }

  Tensor forward(std::span<const Tensor> in) const override {
    const Tensor& lambda = in[0];
    const Tensor& u = in[1];
    if (lambda.rank() != 1 || u.rank() != 2 || u.dim(1) != lambda.dim(0))
      throw DimensionError("diag_scan: lambda " + to_string(lambda.shape()) + " and inputs " + to_string(u.shape()) +
                           " are inconsistent");
    const Eigen::VectorXd l = lambda.array().matrix();
    std::vector<DiagElement> elems;
    elems.reserve(static_cast<std::size_t>(u.dim(0)));
    for (Index i = 0; i < u.dim(0); ++i) elems.push_back({l, row(u, i)});
    const auto prefixes =
        associative_scan(elems, [](const DiagElement& a, const DiagElement& b) { return combine(a, b); });
    Tensor s(u.shape());
    for (Index i = 0; i < u.dim(0); ++i) s.rows_view().row(i) = prefixes[static_cast<std::size_t>(i)].v.transpose();
    return s;
  }

  Tensor vjp(std::span<const Tensor> in, const Tensor& out, const Tensor& adj, std::size_t arg) const override {
    const Tensor& lambda = in[0];
    const Index t = out.dim(0), e = out.dim(1);
    Tensor r(out.shape());
    for (Index i = t - 1; i >= 0; --i)
      for (Index k = 0; k < e; ++k) r(i, k) = adj(i, k) + (i + 1 < t ? lambda[k] * r(i + 1, k) : 0.0);
    if (arg == 1) return r;
    Tensor g({e});
    for (Index i = 1; i < t; ++i)
      for (Index k = 0; k < e; ++k) g[k] += r(i, k) * out(i - 1, k);
    return g;
  }

  Tensor jvp(std::span<const Tensor> in, const Tensor& out, std::span<const Tensor> t) const override {
    const Tensor& lambda = in[0];
    const Index n = out.dim(0), e = out.dim(1);
    Tensor ds(out.shape());
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < e; ++k) {
        const double prev_tangent = i > 0 ? ds(i - 1, k) : 0.0;
        const double prev_state = i > 0 ? out(i - 1, k) : 0.0;
        ds(i, k) = lambda[k] * prev_tangent + t[0][k] * prev_state + t[1](i, k);
      }
    return ds;
  }
};

}  // namespace

ad::Var diag_scan(ad::Var lambda, ad::Var u) {
  return lambda.tape().record(std::make_shared<const DiagScan>(), {lambda, u});
}

DiagSSM::DiagSSM(Index state, Index input, Index out, Rng& rng)
    : lambda_raw("lambda_raw", rng.uniform_tensor({state}, -1.0, 1.0)),
      b(fan_in_param("B", {state, input}, input, rng)),
      c(fan_in_param("C", {out, state}, state, rng)),
      d(fan_in_param("D", {out, input}, input, rng)) {}

ad::Var DiagSSM::states(ad::Var x) const {
  ad::Tape& tape = x.tape();
  if (x.value().rank() != 2 || x.dim(1) != b.value().dim(1))
    throw DimensionError("DiagSSM: inputs " + to_string(x.shape()) + " do not have width " +
                         std::to_string(b.value().dim(1)));
  return diag_scan(ad::tanh(tape.param(lambda_raw)), project(x, tape.param(b)));
}

ad::Var DiagSSM::operator()(ad::Var x) const {
  ad::Tape& tape = x.tape();
  return ad::add(project(states(x), tape.param(c)), project(x, tape.param(d)));
}

Tensor DiagSSM::lambda() const {
  return map(lambda_raw.value(), [](double v) { return std::tanh(v); });
}

std::vector<std::string> primitive_names() { return {"diag_scan"}; }

}  // namespace difflab::rnn
