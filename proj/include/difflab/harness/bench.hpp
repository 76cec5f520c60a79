#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difflab/tensor.hpp"

namespace difflab::harness {

struct BenchRow {
  std::string kind;     // attention | scan
  std::string variant;  // naive | chunked, sequential | parallel
  Index n = 0;
  double seconds = 0.0;  // best of the repeats
  double max_dev = 0.0;  // against the reference variant of the same kind and n
  int threads = 1;
};

struct BenchOptions {
  std::vector<std::string> kinds{"attention", "scan"};
  std::vector<Index> sizes{64, 256, 1024};
  Index repeats = 3;
  Index chunk = 32;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
};

/// Times the reference and the efficient variant of each kernel on the same
/// inputs. The equivalence check runs first; a deviation above the tolerance
/// raises NumericError before anything is timed.
std::vector<BenchRow> run_bench(const BenchOptions& options = {});
std::string bench_csv(const std::vector<BenchRow>& rows);

// Reference and efficient single-query attention, exposed for tests.
Tensor naive_attention(const Tensor& q, const Tensor& keys, const Tensor& values);

}  // namespace difflab::harness
