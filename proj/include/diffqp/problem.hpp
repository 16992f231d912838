#pragma once

/// Problem, solution, and gradient containers for strictly convex QPs
///
///   minimize    0.5 z^T P z + q^T z
///   subject to  A z = b,  C z <= d,
///
/// with P symmetric positive definite, p equality rows, and m inequality
/// rows. Either constraint block may be empty. Data is held densely or in
/// canonical CSR form; all consumers go through the mode-dispatched product
/// helpers below.

#include "diffqp/linalg.hpp"
#include "diffqp/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace diffqp {

enum class StorageMode { dense, sparse_csr };

enum class SolveStatus { optimal, max_iterations, infeasible, numerical_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iterations: return "max_iterations";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

struct QpProblem {
  StorageMode storage_mode = StorageMode::dense;
  Index n = 0;  ///< variables
  Index p = 0;  ///< equality rows
  Index m = 0;  ///< inequality rows

  // Dense storage (empty in sparse mode).
  Matrix P, A, C;
  // Sparse CSR storage (empty in dense mode).
  SparseMatrixRm Ps, As, Cs;

  Vector q, b, d;

  bool is_dense() const { return storage_mode == StorageMode::dense; }

  Vector multiply_p(const Vector& x) const { return is_dense() ? Vector(P * x) : Vector(Ps * x); }
  Vector multiply_a(const Vector& x) const { return is_dense() ? Vector(A * x) : Vector(As * x); }
  Vector multiply_at(const Vector& y) const {
    return is_dense() ? Vector(A.transpose() * y) : Vector(As.transpose() * y);
  }
  Vector multiply_c(const Vector& x) const { return is_dense() ? Vector(C * x) : Vector(Cs * x); }
  Vector multiply_ct(const Vector& y) const {
    return is_dense() ? Vector(C.transpose() * y) : Vector(Cs.transpose() * y);
  }

  Vector p_diagonal() const { return is_dense() ? Vector(P.diagonal()) : Vector(Ps.diagonal()); }

  /// 0.5 z^T P z + q^T z.
  double objective(const Vector& z) const { return 0.5 * z.dot(multiply_p(z)) + q.dot(z); }

  /// Inequality slack C z - d (nonpositive at feasible points).
  Vector inequality_slack(const Vector& z) const { return multiply_c(z) - d; }

  Matrix dense_p() const { return is_dense() ? P : Matrix(Ps); }
  Matrix dense_a() const { return is_dense() ? A : Matrix(As); }
  Matrix dense_c() const { return is_dense() ? C : Matrix(Cs); }
};

struct QpSolution {
  SolveStatus status = SolveStatus::numerical_failure;
  Vector z_star;
  Vector nu_star;   ///< equality multipliers
  Vector mu_star;   ///< inequality multipliers, nonnegative at optimality
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double complementarity_residual = std::numeric_limits<double>::infinity();
  Index iterations = 0;
  double solve_time_ms = 0.0;
};

/// Gradient of a scalar loss with respect to each data block. Empty blocks
/// mean zero. dP is reported symmetrized: dP = 0.5 (M + M^T) of the raw
/// per-entry gradient M, so a symmetry-preserving perturbation of the pair
/// (j, k), (k, j) moves the loss by dP(j,k) + dP(k,j).
struct DataGradient {
  Matrix dP;
  Vector dq;
  Matrix dA;
  Vector db;
  Matrix dC;
  Vector dd;
};

/// Selects which data blocks an operation should materialize.
struct BlockMask {
  bool P = true;
  bool q = true;
  bool A = true;
  bool b = true;
  bool C = true;
  bool d = true;

  static BlockMask all() { return {}; }
  static BlockMask none() { return {false, false, false, false, false, false}; }
  static BlockMask only_q() {
    BlockMask mask = none();
    mask.q = true;
    return mask;
  }
};

enum class ParamBlock { P, q, A, b, C, d };

inline const char* to_string(ParamBlock b) {
  switch (b) {
    case ParamBlock::P: return "P";
    case ParamBlock::q: return "q";
    case ParamBlock::A: return "A";
    case ParamBlock::b: return "b";
    case ParamBlock::C: return "C";
    case ParamBlock::d: return "d";
  }
  return "?";
}

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidProblem(what);
}

inline bool all_finite(const SparseMatrixRm& m) {
  for (Index i = 0; i < m.nonZeros(); ++i) {
    if (!std::isfinite(m.valuePtr()[i])) return false;
  }
  return true;
}

/// Canonical CSR form: compressed, sorted inner indices, duplicates summed,
/// no stored zeros.
inline SparseMatrixRm canonicalize(const SparseMatrixRm& m) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(m.nonZeros()));
  for (Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrixRm::InnerIterator it(m, r); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    }
  }
  SparseMatrixRm out(m.rows(), m.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  out.prune([](Index, Index, double v) { return v != 0.0; });
  out.makeCompressed();
  return out;
}

/// Relative asymmetry max|P - P^T| / max(1, max|P|).
inline double relative_asymmetry(const Matrix& p) {
  const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
  return (p - p.transpose()).cwiseAbs().maxCoeff() / scale;
}

inline double relative_asymmetry(const SparseMatrixRm& p) {
  const SparseMatrixRm pt = SparseMatrixRm(p.transpose());
  SparseMatrixRm diff = p - pt;
  double num = 0.0;
  for (Index i = 0; i < diff.nonZeros(); ++i) num = std::max(num, std::abs(diff.valuePtr()[i]));
  double scale = 1.0;
  for (Index i = 0; i < p.nonZeros(); ++i) scale = std::max(scale, std::abs(p.valuePtr()[i]));
  return num / scale;
}

}  // namespace detail

constexpr double kSymmetryTolerance = 1e-6;

/// Validates and assembles a dense problem. P is symmetrized as
/// (P + P^T) / 2; inputs whose relative asymmetry exceeds 1e-6 are rejected,
/// as are dimension mismatches and non-finite entries. Positive definiteness
/// is not verified here; see check_positive_definite.
inline QpProblem build_problem(Matrix P, Vector q, Matrix A, Vector b, Matrix C, Vector d) {
  const Index n = P.rows();
  detail::require(P.cols() == n, "build_problem: P must be square");
  detail::require(q.size() == n, "build_problem: q size mismatch");
  if (A.size() == 0) A.resize(0, n);
  if (C.size() == 0) C.resize(0, n);
  detail::require(A.cols() == n, "build_problem: A column count mismatch");
  detail::require(C.cols() == n, "build_problem: C column count mismatch");
  detail::require(b.size() == A.rows(), "build_problem: b size mismatch");
  detail::require(d.size() == C.rows(), "build_problem: d size mismatch");
  detail::require(P.allFinite() && q.allFinite() && A.allFinite() && b.allFinite() &&
                      C.allFinite() && d.allFinite(),
                  "build_problem: non-finite entry");
  detail::require(detail::relative_asymmetry(P) <= kSymmetryTolerance,
                  "build_problem: P asymmetry exceeds tolerance");

  QpProblem out;
  out.storage_mode = StorageMode::dense;
  out.n = n;
  out.p = A.rows();
  out.m = C.rows();
  out.P = 0.5 * (P + P.transpose());
  out.q = std::move(q);
  out.A = std::move(A);
  out.b = std::move(b);
  out.C = std::move(C);
  out.d = std::move(d);
  return out;
}

/// Validates and assembles a sparse CSR problem. When p_upper_only is set,
/// P holds only entries with column >= row and is mirrored to full symmetric
/// storage. All matrices are canonicalized (sorted, deduplicated, zero-free).
inline QpProblem build_problem(SparseMatrixRm P, Vector q, SparseMatrixRm A, Vector b,
                               SparseMatrixRm C, Vector d, bool p_upper_only = false) {
  const Index n = P.rows();
  detail::require(P.cols() == n, "build_problem: P must be square");
  detail::require(q.size() == n, "build_problem: q size mismatch");
  if (A.rows() == 0 && A.cols() == 0) A.resize(0, n);
  if (C.rows() == 0 && C.cols() == 0) C.resize(0, n);
  detail::require(A.cols() == n, "build_problem: A column count mismatch");
  detail::require(C.cols() == n, "build_problem: C column count mismatch");
  detail::require(b.size() == A.rows(), "build_problem: b size mismatch");
  detail::require(d.size() == C.rows(), "build_problem: d size mismatch");
  detail::require(q.allFinite() && b.allFinite() && d.allFinite(),
                  "build_problem: non-finite entry");
  detail::require(detail::all_finite(P) && detail::all_finite(A) && detail::all_finite(C),
                  "build_problem: non-finite entry");

  QpProblem out;
  out.storage_mode = StorageMode::sparse_csr;
  out.n = n;
  out.p = A.rows();
  out.m = C.rows();

  if (p_upper_only) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(2 * P.nonZeros()));
    for (Index r = 0; r < P.outerSize(); ++r) {
      for (SparseMatrixRm::InnerIterator it(P, r); it; ++it) {
        detail::require(it.col() >= it.row(),
                        "build_problem: lower-triangle entry in upper-only P");
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        if (it.col() != it.row()) {
          trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(it.row()), it.value());
        }
      }
    }
    SparseMatrixRm full(n, n);
    full.setFromTriplets(trips.begin(), trips.end());
    P = std::move(full);
  }
  detail::require(detail::relative_asymmetry(P) <= kSymmetryTolerance,
                  "build_problem: P asymmetry exceeds tolerance");
  SparseMatrixRm pt = SparseMatrixRm(P.transpose());
  out.Ps = detail::canonicalize(SparseMatrixRm(0.5 * (P + pt)));
  out.As = detail::canonicalize(A);
  out.Cs = detail::canonicalize(C);
  out.q = std::move(q);
  out.b = std::move(b);
  out.d = std::move(d);
  return out;
}

/// Dense copy of a problem, used by oracles that perturb individual entries.
inline QpProblem to_dense(const QpProblem& problem) {
  if (problem.is_dense()) return problem;
  return build_problem(problem.dense_p(), problem.q, problem.dense_a(), problem.b,
                       problem.dense_c(), problem.d);
}

/// Checks positive definiteness of P. Up to probe_count random quadratic-form
/// probes reject clearly indefinite matrices cheaply; a Cholesky
/// factorization then decides, requiring every pivot to exceed
/// 1e-12 * max-diagonal. Never throws; returns false on any failure.
inline bool check_positive_definite(const QpProblem& problem, Index probe_count = 8) {
  const Index n = problem.n;
  if (n == 0) return true;
  const Vector diag = problem.p_diagonal();
  const double max_diag = diag.maxCoeff();
  if (!(max_diag > 0.0)) return false;

  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  for (Index probe = 0; probe < probe_count; ++probe) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = (rng() & 1ull) ? 1.0 : -1.0;
    if (!(v.dot(problem.multiply_p(v)) > 0.0)) return false;
  }

  const double pivot_floor = 1e-12 * max_diag;
  try {
    if (problem.is_dense()) {
      Eigen::LLT<Matrix> llt(problem.P);
      if (llt.info() != Eigen::Success) return false;
      const double min_l = llt.matrixLLT().diagonal().minCoeff();
      return min_l * min_l > pivot_floor;
    }
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(SparseMatrix(problem.Ps));
    if (ldlt.info() != Eigen::Success) return false;
    return ldlt.vectorD().minCoeff() > pivot_floor;
  } catch (...) {
    return false;
  }
}

/// KKT residuals of a candidate primal-dual triple, all in the infinity norm:
/// primal = max(||A z - b||, ||max(C z - d, 0)||), dual = stationarity,
/// complementarity = ||mu .* (C z - d)||.
struct KktResiduals {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

inline KktResiduals compute_residuals(const QpProblem& problem, const Vector& z, const Vector& nu,
                                      const Vector& mu) {
  KktResiduals r;
  Vector stat = problem.multiply_p(z) + problem.q;
  if (problem.p > 0) stat += problem.multiply_at(nu);
  if (problem.m > 0) stat += problem.multiply_ct(mu);
  r.dual = stat.size() > 0 ? stat.cwiseAbs().maxCoeff() : 0.0;
  if (problem.p > 0) {
    r.primal = (problem.multiply_a(z) - problem.b).cwiseAbs().maxCoeff();
  }
  if (problem.m > 0) {
    const Vector slack = problem.inequality_slack(z);
    r.primal = std::max(r.primal, slack.cwiseMax(0.0).maxCoeff());
    r.complementarity = (mu.array() * slack.array()).abs().maxCoeff();
  }
  return r;
}

/// Applies data += t * direction, densifying sparse problems first. Used by
/// finite-difference oracles; empty direction blocks are treated as zero.
inline QpProblem perturb_problem(const QpProblem& problem, const DataGradient& direction,
                                 double t) {
  QpProblem dense = to_dense(problem);
  Matrix P = dense.P;
  Vector q = dense.q;
  Matrix A = dense.A;
  Vector b = dense.b;
  Matrix C = dense.C;
  Vector d = dense.d;
  if (direction.dP.size() > 0) P += t * 0.5 * (direction.dP + direction.dP.transpose());
  if (direction.dq.size() > 0) q += t * direction.dq;
  if (direction.dA.size() > 0) A += t * direction.dA;
  if (direction.db.size() > 0) b += t * direction.db;
  if (direction.dC.size() > 0) C += t * direction.dC;
  if (direction.dd.size() > 0) d += t * direction.dd;
  return build_problem(std::move(P), std::move(q), std::move(A), std::move(b), std::move(C),
                       std::move(d));
}

}  // namespace diffqp
