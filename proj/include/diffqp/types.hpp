#pragma once

/// Common scalar, vector, and matrix aliases plus shared error types.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <stdexcept>
#include <string>

namespace diffqp {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Column-major sparse storage, used by factorizations.
using SparseMatrix = Eigen::SparseMatrix<double>;
/// Row-major (CSR) sparse storage, used for problem data.
using SparseMatrixRm = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Thrown when input data violates a structural contract
/// (dimensions, symmetry, finiteness, malformed sparse indexing).
class InvalidProblem : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a factorization fails; carries the offending pivot when known.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, Index pivot_index, double pivot_value)
      : std::runtime_error(what), pivot_index(pivot_index), pivot_value(pivot_value) {}

  Index pivot_index = -1;
  double pivot_value = 0.0;
};

}  // namespace diffqp
