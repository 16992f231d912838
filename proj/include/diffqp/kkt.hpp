#pragma once

/// Reference sensitivities by direct differentiation of the optimality
/// conditions, plus a finite-difference oracle. These are the baselines the
/// penalty backward pass is validated against.
///
/// Reduced system (strictly active rows only): with B rows C_active,
///
///   [ P        A^T  C_act^T ] [dz  ]     [ dP z + dq + dA^T nu + dC_act^T mu ]
///   [ A        0    0       ] [dnu ] = - [ dA z - db                          ]
///   [ C_act    0    0       ] [dmu ]     [ dC_act z - dd_act                  ]
///
/// It is nonsingular under LICQ plus strict complementarity; otherwise the
/// solve falls back to a damped least-squares step and reports it.
///
/// Full system: keeps every inequality row through the complementarity
/// equations diag(mu) (C z - d + dC z - dd) + diag(C z - d) dmu = 0; the
/// matrix is unsymmetric and becomes exactly singular under weak activity
/// (a row with zero slack and zero multiplier), which the solver reports
/// instead of papering over.

#include "diffqp/linalg.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/solve.hpp"
#include "diffqp/types.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace diffqp {

/// Raised by relative_discrepancy when the reference has zero norm.
class ZeroReferenceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class KktSolveMode { direct, least_squares_damped };

/// Sensitivities of the primal/dual solution for one data block.
struct KktJacobian {
  Matrix dz;   ///< n x s
  Matrix dnu;  ///< p x s
  Matrix dmu;  ///< m x s (reduced mode leaves inactive rows zero)
  double residual = 0.0;  ///< linear-system residual of the sensitivity solve
  /// least_squares_damped when the system was singular (degeneracy report).
  KktSolveMode solve_mode = KktSolveMode::direct;

  bool degenerate() const { return solve_mode == KktSolveMode::least_squares_damped; }
};

namespace detail {

/// Parameter count for a block under the shared column layouts (see
/// assemble_rhs for the ordering conventions).
inline Index block_param_count(const QpProblem& problem, ParamBlock block) {
  switch (block) {
    case ParamBlock::P: return problem.n * (problem.n + 1) / 2;
    case ParamBlock::q: return problem.n;
    case ParamBlock::A: return problem.p * problem.n;
    case ParamBlock::b: return problem.p;
    case ParamBlock::C: return problem.m * problem.n;
    case ParamBlock::d: return problem.m;
  }
  return 0;
}

/// Unit data perturbation for column `idx` of a block. P columns perturb the
/// (j, k) and (k, j) entries together.
inline DataGradient unit_direction(const QpProblem& problem, ParamBlock block, Index idx) {
  DataGradient dir;
  const Index n = problem.n;
  switch (block) {
    case ParamBlock::q:
      dir.dq = Vector::Zero(n);
      dir.dq[idx] = 1.0;
      break;
    case ParamBlock::b:
      dir.db = Vector::Zero(problem.p);
      dir.db[idx] = 1.0;
      break;
    case ParamBlock::d:
      dir.dd = Vector::Zero(problem.m);
      dir.dd[idx] = 1.0;
      break;
    case ParamBlock::A:
      dir.dA = Matrix::Zero(problem.p, n);
      dir.dA(idx / n, idx % n) = 1.0;
      break;
    case ParamBlock::C:
      dir.dC = Matrix::Zero(problem.m, n);
      dir.dC(idx / n, idx % n) = 1.0;
      break;
    case ParamBlock::P: {
      dir.dP = Matrix::Zero(n, n);
      Index col = idx;
      Index j = 0;
      while (col >= n - j) {
        col -= n - j;
        ++j;
      }
      const Index k = j + col;
      dir.dP(j, k) = 1.0;
      dir.dP(k, j) = 1.0;  // symmetrized application keeps this a unit pair
      break;
    }
  }
  return dir;
}

inline Matrix assemble_reduced_kkt_dense(const QpProblem& problem, const ActiveSet& active_set) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(active_set.active.size());
  Matrix kkt = Matrix::Zero(n + p + a, n + p + a);
  kkt.topLeftCorner(n, n) = problem.P;
  if (p > 0) {
    kkt.block(n, 0, p, n) = problem.A;
    kkt.block(0, n, n, p) = problem.A.transpose();
  }
  for (Index k = 0; k < a; ++k) {
    kkt.row(n + p + k).head(n) = problem.C.row(active_set.active[k]);
    kkt.col(n + p + k).head(n) = problem.C.row(active_set.active[k]).transpose();
  }
  return kkt;
}

inline SparseMatrix assemble_reduced_kkt_sparse(const QpProblem& problem,
                                                const ActiveSet& active_set) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(active_set.active.size());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(problem.Ps.nonZeros() + 2 * problem.As.nonZeros() +
                                    2 * problem.Cs.nonZeros()));
  for (Index r = 0; r < problem.Ps.outerSize(); ++r) {
    for (SparseMatrixRm::InnerIterator it(problem.Ps, r); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    }
  }
  for (Index r = 0; r < problem.As.outerSize(); ++r) {
    for (SparseMatrixRm::InnerIterator it(problem.As, r); it; ++it) {
      trips.emplace_back(static_cast<int>(n + it.row()), static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + it.row()), it.value());
    }
  }
  for (Index k = 0; k < a; ++k) {
    const Index i = active_set.active[k];
    for (SparseMatrixRm::InnerIterator it(problem.Cs, i); it; ++it) {
      trips.emplace_back(static_cast<int>(n + p + k), static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + p + k), it.value());
    }
  }
  SparseMatrix kkt(n + p + a, n + p + a);
  kkt.setFromTriplets(trips.begin(), trips.end());
  return kkt;
}

}  // namespace detail

/// Differentiates the optimality conditions restricted to the active rows.
inline KktJacobian kkt_jacobian_reduced(const QpProblem& problem, const QpSolution& solution,
                                        const ActiveSet& active_set, ParamBlock block,
                                        double damping = 1e-10) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(active_set.active.size());
  const Index dim = n + p + a;
  const Index s = detail::block_param_count(problem, block);
  const Vector& z = solution.z_star;

  Matrix rhs = Matrix::Zero(dim, s);
  switch (block) {
    case ParamBlock::q:
      for (Index j = 0; j < n; ++j) rhs(j, j) = -1.0;
      break;
    case ParamBlock::b:
      for (Index j = 0; j < p; ++j) rhs(n + j, j) = 1.0;
      break;
    case ParamBlock::d:
      for (Index k = 0; k < a; ++k) rhs(n + p + k, active_set.active[k]) = 1.0;
      break;
    case ParamBlock::A: {
      for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < n; ++k) {
          const Index col = j * n + k;
          rhs(k, col) -= solution.nu_star[j];
          rhs(n + j, col) -= z[k];
        }
      }
      break;
    }
    case ParamBlock::C: {
      for (Index kpos = 0; kpos < a; ++kpos) {
        const Index i = active_set.active[kpos];
        for (Index k = 0; k < n; ++k) {
          const Index col = i * n + k;
          rhs(k, col) -= solution.mu_star[i];
          rhs(n + p + kpos, col) -= z[k];
        }
      }
      break;
    }
    case ParamBlock::P: {
      Index col = 0;
      for (Index j = 0; j < n; ++j) {
        for (Index k = j; k < n; ++k, ++col) {
          rhs(j, col) -= z[k];
          if (k != j) rhs(k, col) -= z[j];
        }
      }
      break;
    }
  }

  KktJacobian out;
  IndefiniteSolveResult sol =
      problem.is_dense()
          ? indefinite_solve(detail::assemble_reduced_kkt_dense(problem, active_set), rhs, damping)
          : indefinite_solve(detail::assemble_reduced_kkt_sparse(problem, active_set), rhs,
                             damping);
  out.residual = sol.residual;
  out.solve_mode = sol.damped_fallback ? KktSolveMode::least_squares_damped : KktSolveMode::direct;
  out.dz = sol.x.topRows(n);
  out.dnu = sol.x.middleRows(n, p);
  out.dmu = Matrix::Zero(problem.m, s);
  for (Index k = 0; k < a; ++k) out.dmu.row(active_set.active[k]) = sol.x.row(n + p + k);
  return out;
}

/// Loss gradient with respect to q through the reduced optimality system:
/// one adjoint solve K w = (r, 0, 0) and dL/dq = -w_z. This is the
/// single-right-hand-side reference backward pass the smoothed-penalty VJP is
/// compared against (accuracy and wall clock).
inline Vector kkt_vjp_wrt_q(const QpProblem& problem, const ActiveSet& active_set, const Vector& r,
                            double damping = 1e-10) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(active_set.active.size());
  if (r.size() != n) throw InvalidProblem("kkt_vjp_wrt_q: upstream gradient size mismatch");
  Matrix rhs = Matrix::Zero(n + p + a, 1);
  rhs.col(0).head(n) = r;
  IndefiniteSolveResult sol =
      problem.is_dense()
          ? indefinite_solve(detail::assemble_reduced_kkt_dense(problem, active_set), rhs, damping)
          : indefinite_solve(detail::assemble_reduced_kkt_sparse(problem, active_set), rhs,
                             damping);
  return Vector(-sol.x.col(0).head(n));
}

/// Differentiates the full optimality system including complementarity rows.
/// Exactly singular under weak activity; the report flags it.
inline KktJacobian kkt_jacobian_full(const QpProblem& problem, const QpSolution& solution,
                                     ParamBlock block, double damping = 1e-10) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index m = problem.m;
  const Index dim = n + p + m;
  const Index s = detail::block_param_count(problem, block);
  const Vector& z = solution.z_star;
  const Vector slack = m > 0 ? Vector(problem.inequality_slack(z)) : Vector(0);

  Matrix kkt = Matrix::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = problem.dense_p();
  if (p > 0) {
    const Matrix ad = problem.dense_a();
    kkt.block(n, 0, p, n) = ad;
    kkt.block(0, n, n, p) = ad.transpose();
  }
  if (m > 0) {
    const Matrix cd = problem.dense_c();
    kkt.block(0, n + p, n, m) = cd.transpose();
    kkt.block(n + p, 0, m, n) = solution.mu_star.asDiagonal() * cd;
    kkt.block(n + p, n + p, m, m) = slack.asDiagonal();
  }

  Matrix rhs = Matrix::Zero(dim, s);
  switch (block) {
    case ParamBlock::q:
      for (Index j = 0; j < n; ++j) rhs(j, j) = -1.0;
      break;
    case ParamBlock::b:
      for (Index j = 0; j < p; ++j) rhs(n + j, j) = 1.0;
      break;
    case ParamBlock::d:
      for (Index i = 0; i < m; ++i) rhs(n + p + i, i) = solution.mu_star[i];
      break;
    case ParamBlock::A: {
      for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < n; ++k) {
          const Index col = j * n + k;
          rhs(k, col) -= solution.nu_star[j];
          rhs(n + j, col) -= z[k];
        }
      }
      break;
    }
    case ParamBlock::C: {
      for (Index i = 0; i < m; ++i) {
        for (Index k = 0; k < n; ++k) {
          const Index col = i * n + k;
          rhs(k, col) -= solution.mu_star[i];
          rhs(n + p + i, col) -= solution.mu_star[i] * z[k];
        }
      }
      break;
    }
    case ParamBlock::P: {
      Index col = 0;
      for (Index j = 0; j < n; ++j) {
        for (Index k = j; k < n; ++k, ++col) {
          rhs(j, col) -= z[k];
          if (k != j) rhs(k, col) -= z[j];
        }
      }
      break;
    }
  }

  IndefiniteSolveResult sol = indefinite_solve(kkt, rhs, damping);
  KktJacobian out;
  out.residual = sol.residual;
  out.solve_mode = sol.damped_fallback ? KktSolveMode::least_squares_damped : KktSolveMode::direct;
  out.dz = sol.x.topRows(n);
  out.dnu = sol.x.middleRows(n, p);
  out.dmu = sol.x.bottomRows(m);
  return out;
}

/// Central finite differences of the solution map, one re-solve pair per
/// parameter. P parameters perturb symmetric entry pairs. Uses a tight
/// forward tolerance so the oracle noise stays far below comparison
/// tolerances.
inline Matrix finite_difference_jacobian(const QpProblem& problem, ParamBlock block,
                                         double step = 1e-6, SolverSettings settings = {}) {
  if (settings.eps_abs > 1e-10) settings.eps_abs = 1e-10;
  if (settings.max_iterations < 300) settings.max_iterations = 300;
  const Index s = detail::block_param_count(problem, block);
  Matrix jac(problem.n, s);
  for (Index idx = 0; idx < s; ++idx) {
    const DataGradient dir = detail::unit_direction(problem, block, idx);
    const QpProblem plus = perturb_problem(problem, dir, step);
    const QpProblem minus = perturb_problem(problem, dir, -step);
    const QpSolution sol_plus = solve(plus, settings);
    const QpSolution sol_minus = solve(minus, settings);
    if (sol_plus.status != SolveStatus::optimal || sol_minus.status != SolveStatus::optimal) {
      throw std::runtime_error("finite_difference_jacobian: perturbed solve failed");
    }
    jac.col(idx) = (sol_plus.z_star - sol_minus.z_star) / (2.0 * step);
  }
  return jac;
}

/// Relative discrepancy ||ga - gb||_F / ||gb||_F against reference gb.
inline double relative_discrepancy(const Matrix& ga, const Matrix& gb) {
  if (ga.rows() != gb.rows() || ga.cols() != gb.cols()) {
    throw InvalidProblem("relative_discrepancy: shape mismatch");
  }
  const double ref = gb.norm();
  if (ref == 0.0) {
    throw ZeroReferenceError("relative_discrepancy: reference gradient has zero norm");
  }
  return (ga - gb).norm() / ref;
}

inline double relative_discrepancy(const Vector& ga, const Vector& gb) {
  return relative_discrepancy(Matrix(ga), Matrix(gb));
}

}  // namespace diffqp
