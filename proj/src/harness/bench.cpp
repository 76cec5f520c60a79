#include "difflab/harness/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "difflab/attention/attention.hpp"
#include "difflab/errors.hpp"
#include "difflab/kernels.hpp"
#include "difflab/random.hpp"
#include "difflab/recurrent/recurrent.hpp"

namespace difflab::harness {

Tensor naive_attention(const Tensor& q, const Tensor& keys, const Tensor& values) {
  const Index m = keys.dim(0), k = keys.dim(1);
  const Tensor scores = matmul(keys, q.reshaped({k, 1})).reshaped({m});
  const Tensor weights = softmax(scores * (1.0 / std::sqrt(static_cast<double>(k))));
  return matmul(weights.reshaped({1, m}), values).reshaped({values.dim(1)});
}

namespace {

double best_time(Index repeats, const std::function<void()>& fn) {
  double best = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return best;
}

void gate(const std::string& kind, Index n, double dev, double tolerance) {
  if (!(dev <= tolerance)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "bench: %s variants disagree at n=%lld (max deviation %.3g > %.3g)", kind.c_str(),
                  static_cast<long long>(n), dev, tolerance);
    throw NumericError(buf);
  }
}

std::vector<Index> chunk_sizes(Index m, Index chunk) {
  std::vector<Index> out;
  for (Index start = 0; start < m; start += chunk) out.push_back(std::min(chunk, m - start));
  return out;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& options) {
  if (options.repeats < 1) throw ContractError("bench: repeats must be positive");
  if (options.chunk < 1) throw ContractError("bench: chunk must be positive");
  Rng rng = Rng(options.seed).split("bench");
  for (const auto& kind : options.kinds)
    if (kind != "attention" && kind != "scan") throw ContractError("bench: unknown kind '" + kind + "'");
  for (Index n : options.sizes)
    if (n < 1) throw ContractError("bench: sizes must be positive");
  auto wanted = [&](const std::string& kind) {
    return std::find(options.kinds.begin(), options.kinds.end(), kind) != options.kinds.end();
  };
  std::vector<BenchRow> rows;
  for (Index n : wanted("attention") ? options.sizes : std::vector<Index>{}) {
    const Index k = 16, v = 16;
    const Tensor q = rng.normal_tensor({k});
    const Tensor keys = rng.normal_tensor({n, k}), values = rng.normal_tensor({n, v});
    const auto chunks = chunk_sizes(n, options.chunk);
    const Tensor ref = naive_attention(q, keys, values);
    const double dev = max_abs_diff(ref, attn::chunked_attention(q, keys, values, chunks));
    gate("attention", n, dev, options.tolerance);
    rows.push_back({"attention", "naive", n, best_time(options.repeats, [&] { (void)naive_attention(q, keys, values); }),
                    0.0, 1});
    rows.push_back({"attention", "chunked",
                    n, best_time(options.repeats, [&] { (void)attn::chunked_attention(q, keys, values, chunks); }), dev, 1});
  }
  for (Index n : wanted("scan") ? options.sizes : std::vector<Index>{}) {
    const Index e = 4, c = 2;
    Eigen::MatrixXd a = rng.uniform_tensor({e, e}, -1.0, 1.0).matrix();
    a *= 0.9 / rnn::spectral_radius(a);
    const Eigen::MatrixXd b = rng.uniform_tensor({e, c}, -1.0, 1.0).matrix();
    const Tensor x = rng.normal_tensor({n, c});
    const Tensor ref = rnn::ssm_states_sequential(x, a, b);
    const double dev = max_abs_diff(ref, rnn::ssm_parallel_scan(x, a, b));
    gate("scan", n, dev, options.tolerance);
    rows.push_back({"scan", "sequential", n, best_time(options.repeats, [&] { (void)rnn::ssm_states_sequential(x, a, b); }),
                    0.0, 1});
    rows.push_back({"scan", "parallel", n, best_time(options.repeats, [&] { (void)rnn::ssm_parallel_scan(x, a, b); }),
                    dev, 1});
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "kind,variant,n,seconds,max_dev,threads\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%lld,%.6e,%.3e,%d\n", r.kind.c_str(), r.variant.c_str(),
                  static_cast<long long>(r.n), r.seconds, r.max_dev, r.threads);
    out += buf;
  }
  return out;
}

}  // namespace difflab::harness
