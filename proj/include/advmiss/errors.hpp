#pragma once

#include <stdexcept>
#include <string>

namespace advmiss {

/// Mismatched matrix/vector shapes or index sets.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A caller-side contract was violated (e.g. support outside the given DAG).
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Cholesky / inverse failed on a matrix that had to be positive definite.
struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A weight-matrix support that had to be acyclic was not.
struct CyclicGraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Requested an operation the object cannot provide (e.g. closed form for MCAR-from-policy).
struct CapabilityError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace advmiss
