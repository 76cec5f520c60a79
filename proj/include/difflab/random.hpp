#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "difflab/tensor.hpp"

namespace difflab {

/// Seeded generator with named sub-streams.
///
/// Every source of randomness in a run (initialization, shuffling, dropout,
/// sampling) takes its own stream via split(), so adding draws to one stream
/// never perturbs another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::string_view stream) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : stream) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return Rng(mix(seed_ ^ mix(h)));
  }

  std::mt19937_64& engine() { return engine_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }
  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = normal(mean, stddev);
    return t;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {  // SplitMix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace difflab
