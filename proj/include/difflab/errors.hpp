#pragma once

#include <stdexcept>
#include <string>

namespace difflab {

// Shape or extent incompatibility between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation (log of a non-positive value, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN/Inf produced or consumed where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated API contract (non-scalar loss, bad hyper-parameter, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Token id outside the embedding vocabulary.
class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Graph structure an operation cannot handle: a zero degree under a
// normalization, or an empty neighborhood under mean/max aggregation.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problems; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace difflab
