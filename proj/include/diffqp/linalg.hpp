#pragma once

/// Shared linear-algebra kernels.
///
/// SPD systems are handled through spd_factorize / spd_solve, which pick
/// between a dense Cholesky, a sparse Cholesky with fill-reducing (AMD)
/// ordering, and Jacobi-preconditioned conjugate gradients. The CG path also
/// accepts a matrix-free operator so that diagonal-plus-low-rank matrices
/// never have to be formed. Saddle-point systems go through indefinite_solve,
/// which falls back to damped least squares when the matrix is singular.

#include "diffqp/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace diffqp {

using LinearOperator = std::function<Vector(const Vector&)>;

enum class FactorKind { dense_cholesky, sparse_cholesky, cg_operator, woodbury };

/// Strategy override for spd_factorize. Automatic picks dense for small or
/// dense-ish matrices, sparse Cholesky otherwise, and conjugate gradients
/// when the projected factor would exceed the memory budget.
enum class FactorStrategy { automatic, dense, sparse_direct, conjugate_gradient };

struct FactorOptions {
  FactorStrategy strategy = FactorStrategy::automatic;
  Index dense_cutoff = 512;            ///< automatic: n <= cutoff goes dense
  double dense_density = 0.25;         ///< automatic: density above this goes dense
  double memory_budget_bytes = 2.0 * 1073741824.0;
  double cg_tolerance = 1e-10;         ///< relative residual target for CG solves
  Index cg_max_iterations = 0;         ///< 0 means 10 n
};

struct FillStats {
  Index input_nnz = 0;
  Index factor_nnz = 0;
};

/// Handle to a factorized (or operator-form) SPD matrix. Copies are shallow;
/// concurrent solves against one factor are safe.
struct SpdFactor {
  FactorKind kind = FactorKind::dense_cholesky;
  Index n = 0;
  /// Smallest diagonal pivot for factorization kinds; for cg_operator this is
  /// the smallest preconditioner diagonal entry instead.
  double min_pivot = 0.0;
  FillStats fill;
  double cg_tolerance = 1e-10;
  Index cg_max_iterations = 0;

  std::shared_ptr<const Matrix> dense_input;
  std::shared_ptr<const SparseMatrix> sparse_input;
  std::shared_ptr<const Eigen::LLT<Matrix>> dense_factor;
  std::shared_ptr<const Eigen::SimplicialLDLT<SparseMatrix>> sparse_factor;
  LinearOperator apply;     ///< set for cg_operator
  Vector jacobi_diagonal;   ///< set for cg_operator

  /// Woodbury kind: the matrix is base + U diag(w) U^T. The base carries its
  /// own factor; solves go through the r x r capacitance diag(1/w) + U^T
  /// base^{-1} U, so a handful of dense rows never densify the factorization.
  std::shared_ptr<const SpdFactor> wood_base;
  std::shared_ptr<const Matrix> wood_u;             ///< n x r update columns
  std::shared_ptr<const Vector> wood_w;             ///< r positive weights
  std::shared_ptr<const Matrix> wood_base_inv_u;    ///< base^{-1} U
  std::shared_ptr<const Eigen::LLT<Matrix>> wood_cap;

  /// Applies the underlying matrix to a vector, regardless of kind.
  Vector multiply(const Vector& x) const {
    switch (kind) {
      case FactorKind::dense_cholesky:
        return (*dense_input) * x;
      case FactorKind::sparse_cholesky:
        return (*sparse_input) * x;
      case FactorKind::cg_operator:
        return apply(x);
      case FactorKind::woodbury:
        return wood_base->multiply(x) +
               (*wood_u) * wood_w->cwiseProduct(wood_u->transpose() * x);
    }
    return Vector();
  }
};

inline Matrix spd_solve(const SpdFactor& factor, const Matrix& rhs);

namespace detail {

/// One direct-solve pass (no refinement) for the factorization kinds. The
/// Woodbury pass runs the base solve at full quality (spd_solve refines it)
/// and applies the capacitance correction; the base kind is never Woodbury,
/// so the recursion is one level deep.
inline Matrix factor_solve_pass(const SpdFactor& f, const Matrix& rhs) {
  switch (f.kind) {
    case FactorKind::dense_cholesky:
      return f.dense_factor->solve(rhs);
    case FactorKind::sparse_cholesky:
      return f.sparse_factor->solve(rhs);
    case FactorKind::woodbury: {
      Matrix x = spd_solve(*f.wood_base, rhs);
      const Matrix t = f.wood_cap->solve(f.wood_u->transpose() * x);
      x.noalias() -= (*f.wood_base_inv_u) * t;
      return x;
    }
    case FactorKind::cg_operator:
      break;
  }
  return Matrix();
}

/// Unblocked Cholesky used only to locate the first nonpositive pivot after
/// Eigen's factorization reports a numerical problem.
inline std::pair<Index, double> first_bad_pivot(const Matrix& m) {
  const Index n = m.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    double diag = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(diag > 0.0) || !std::isfinite(diag)) return {j, diag};
    l(j, j) = std::sqrt(diag);
    for (Index i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return {-1, 0.0};
}

/// Projects the Cholesky factor size of a symmetric pattern via elimination
/// tree column counts, aborting early once the count exceeds stop_at.
/// Returns the projected nonzero count of L (including the diagonal), or
/// stop_at + 1 if the walk was aborted.
inline Index projected_cholesky_nnz(const SparseMatrix& perm_sym, Index stop_at) {
  const Index n = perm_sym.rows();
  std::vector<Index> parent(static_cast<size_t>(n), -1);
  std::vector<Index> tags(static_cast<size_t>(n), -1);
  Index total = n;  // diagonal of L
  for (Index k = 0; k < n; ++k) {
    tags[static_cast<size_t>(k)] = k;
    for (SparseMatrix::InnerIterator it(perm_sym, k); it; ++it) {
      Index i = it.index();
      if (i >= k) continue;
      for (; tags[static_cast<size_t>(i)] != k; i = parent[static_cast<size_t>(i)]) {
        if (parent[static_cast<size_t>(i)] == -1) parent[static_cast<size_t>(i)] = k;
        tags[static_cast<size_t>(i)] = k;
        if (++total > stop_at) return stop_at + 1;
      }
    }
  }
  return total;
}

inline SpdFactor factorize_dense(std::shared_ptr<const Matrix> m, const FactorOptions& opts) {
  SpdFactor f;
  f.kind = FactorKind::dense_cholesky;
  f.n = m->rows();
  f.cg_tolerance = opts.cg_tolerance;
  f.dense_input = m;
  auto llt = std::make_shared<Eigen::LLT<Matrix>>(*m);
  if (llt->info() != Eigen::Success) {
    auto [idx, val] = first_bad_pivot(*m);
    throw FactorizationError("spd_factorize: matrix is not positive definite", idx, val);
  }
  const Vector l_diag = llt->matrixLLT().diagonal();
  f.min_pivot = l_diag.minCoeff();
  f.min_pivot *= f.min_pivot;
  if (!(f.min_pivot > 0.0)) {
    auto [idx, val] = first_bad_pivot(*m);
    throw FactorizationError("spd_factorize: nonpositive pivot", idx, val);
  }
  f.fill.input_nnz = f.n * f.n;
  f.fill.factor_nnz = f.n * (f.n + 1) / 2;
  f.dense_factor = std::move(llt);
  return f;
}

inline SpdFactor factorize_sparse_direct(std::shared_ptr<const SparseMatrix> m,
                                         const FactorOptions& opts) {
  SpdFactor f;
  f.kind = FactorKind::sparse_cholesky;
  f.n = m->rows();
  f.cg_tolerance = opts.cg_tolerance;
  f.sparse_input = m;
  auto ldlt = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>();
  ldlt->compute(*m);
  if (ldlt->info() != Eigen::Success) {
    throw FactorizationError("spd_factorize: sparse factorization failed", -1,
                             std::numeric_limits<double>::quiet_NaN());
  }
  const Vector d = ldlt->vectorD();
  Index bad = -1;
  for (Index i = 0; i < d.size(); ++i) {
    if (!(d[i] > 0.0) || !std::isfinite(d[i])) {
      bad = i;
      break;
    }
  }
  if (bad >= 0) {
    throw FactorizationError("spd_factorize: nonpositive pivot", bad, d[bad]);
  }
  f.min_pivot = d.minCoeff();
  f.fill.input_nnz = m->nonZeros();
  f.fill.factor_nnz = ldlt->matrixL().nestedExpression().nonZeros();
  f.sparse_factor = std::move(ldlt);
  return f;
}

inline SpdFactor factorize_cg(LinearOperator apply, Vector jacobi, Index n,
                              const FactorOptions& opts,
                              std::shared_ptr<const SparseMatrix> keep = nullptr) {
  SpdFactor f;
  f.kind = FactorKind::cg_operator;
  f.n = n;
  f.apply = std::move(apply);
  if (jacobi.size() == 0) jacobi = Vector::Ones(n);
  for (Index i = 0; i < n; ++i) {
    if (!(jacobi[i] > 0.0)) jacobi[i] = 1.0;
  }
  f.jacobi_diagonal = std::move(jacobi);
  f.min_pivot = f.n > 0 ? f.jacobi_diagonal.minCoeff() : 0.0;
  f.cg_tolerance = opts.cg_tolerance;
  f.cg_max_iterations = opts.cg_max_iterations > 0 ? opts.cg_max_iterations : 10 * n;
  f.sparse_input = std::move(keep);
  if (f.sparse_input) f.fill.input_nnz = f.sparse_input->nonZeros();
  return f;
}

/// Jacobi-preconditioned conjugate gradients to a relative residual target.
inline Vector pcg_solve(const SpdFactor& f, const Vector& b) {
  const Index n = f.n;
  Vector x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (!(bnorm > 0.0)) return x;
  Vector r = b;
  Vector z = r.cwiseQuotient(f.jacobi_diagonal);
  Vector p = z;
  double rz = r.dot(z);
  const double target = f.cg_tolerance * bnorm;
  const Index max_iter = f.cg_max_iterations > 0 ? f.cg_max_iterations : 10 * n;
  for (Index it = 0; it < max_iter; ++it) {
    const Vector ap = f.apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      throw FactorizationError("spd_solve: operator is not positive definite along a search direction",
                               -1, pap);
    }
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    if (r.norm() <= target) break;
    z = r.cwiseQuotient(f.jacobi_diagonal);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  return x;
}

}  // namespace detail

/// Factorizes a dense SPD matrix. The automatic strategy keeps dense input on
/// the dense path; conjugate_gradient wraps it as an operator instead.
inline SpdFactor spd_factorize(const Matrix& m, const FactorOptions& opts = {}) {
  if (m.rows() != m.cols()) throw InvalidProblem("spd_factorize: matrix must be square");
  auto keep = std::make_shared<const Matrix>(m);
  if (opts.strategy == FactorStrategy::conjugate_gradient) {
    auto f = detail::factorize_cg([keep](const Vector& x) { return (*keep) * x; },
                                  keep->diagonal(), keep->rows(), opts);
    f.dense_input = keep;
    return f;
  }
  return detail::factorize_dense(std::move(keep), opts);
}

/// Factorizes a sparse SPD matrix, choosing dense Cholesky, sparse Cholesky
/// with AMD ordering, or preconditioned CG per the options. The sparse factor
/// memory is projected from elimination-tree column counts before anything is
/// allocated, and the CG fallback kicks in beyond the memory budget.
inline SpdFactor spd_factorize(const SparseMatrix& m, const FactorOptions& opts = {}) {
  if (m.rows() != m.cols()) throw InvalidProblem("spd_factorize: matrix must be square");
  const Index n = m.rows();
  SparseMatrix compressed = m;
  compressed.makeCompressed();
  auto keep = std::make_shared<const SparseMatrix>(std::move(compressed));

  const double density =
      n > 0 ? static_cast<double>(m.nonZeros()) / (static_cast<double>(n) * n) : 0.0;

  FactorStrategy strategy = opts.strategy;
  if (strategy == FactorStrategy::automatic) {
    if (n <= opts.dense_cutoff || density > opts.dense_density) {
      strategy = FactorStrategy::dense;
    } else {
      strategy = FactorStrategy::sparse_direct;
      // Project factor fill on the AMD-permuted pattern; fall back to CG when
      // the factor would not fit in the memory budget.
      Eigen::AMDOrdering<int> amd;
      Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;
      amd(m.selfadjointView<Eigen::Lower>(), perm);
      SparseMatrix permuted(n, n);
      permuted.selfadjointView<Eigen::Lower>() =
          m.selfadjointView<Eigen::Lower>().twistedBy(perm.inverse());
      const double bytes_per_entry = 12.0;  // value + inner index
      const Index budget_entries =
          static_cast<Index>(std::min(opts.memory_budget_bytes / bytes_per_entry, 9.0e18));
      const Index projected = detail::projected_cholesky_nnz(permuted, budget_entries);
      if (projected > budget_entries) strategy = FactorStrategy::conjugate_gradient;
    }
  }

  switch (strategy) {
    case FactorStrategy::dense: {
      auto dense = std::make_shared<const Matrix>(Matrix(m));
      auto f = detail::factorize_dense(dense, opts);
      f.sparse_input = keep;
      return f;
    }
    case FactorStrategy::conjugate_gradient:
      return detail::factorize_cg([keep](const Vector& x) { return (*keep) * x; },
                                  keep->diagonal(), n, opts, keep);
    case FactorStrategy::sparse_direct:
    case FactorStrategy::automatic:
      break;
  }
  return detail::factorize_sparse_direct(std::move(keep), opts);
}

/// Wraps a matrix-free SPD operator for CG solves. The diagonal is used as
/// the Jacobi preconditioner; nonpositive entries are replaced by 1.
inline SpdFactor spd_factorize_operator(LinearOperator apply, Vector diagonal, Index n,
                                        const FactorOptions& opts = {}) {
  if (!apply) throw InvalidProblem("spd_factorize_operator: missing operator");
  if (diagonal.size() != 0 && diagonal.size() != n) {
    throw InvalidProblem("spd_factorize_operator: diagonal size mismatch");
  }
  return detail::factorize_cg(std::move(apply), std::move(diagonal), n, opts);
}

/// Factorizes base + U diag(w) U^T without ever forming the update
/// explicitly. The base is factorized on its own and solves apply the
/// Woodbury identity through the r x r capacitance diag(1/w) + U^T base^{-1}
/// U. Intended for Gram-plus-dense-rows structure: a constraint row with k
/// nonzeros costs k^2 entries inside an explicit Gram but only one dense
/// column here, so a few wide rows (sum constraints, budget rows) stop
/// forcing the factorization dense or out of memory. Both base and
/// capacitance must be positive definite; w must be strictly positive.
inline SpdFactor spd_factorize_low_rank(const SparseMatrix& base, Matrix u, Vector w,
                                        const FactorOptions& opts = {}) {
  if (base.rows() != base.cols()) {
    throw InvalidProblem("spd_factorize_low_rank: base must be square");
  }
  if (u.rows() != base.rows()) {
    throw InvalidProblem("spd_factorize_low_rank: update rows must match base");
  }
  if (w.size() != u.cols()) {
    throw InvalidProblem("spd_factorize_low_rank: one weight per update column required");
  }
  for (Index i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0)) {
      throw InvalidProblem("spd_factorize_low_rank: update weights must be positive");
    }
  }

  SpdFactor f;
  f.kind = FactorKind::woodbury;
  f.n = base.rows();
  f.cg_tolerance = opts.cg_tolerance;
  f.wood_base = std::make_shared<const SpdFactor>(spd_factorize(base, opts));
  auto uk = std::make_shared<const Matrix>(std::move(u));
  auto wk = std::make_shared<const Vector>(std::move(w));
  auto base_inv_u = std::make_shared<const Matrix>(spd_solve(*f.wood_base, *uk));

  Matrix cap = Matrix(wk->cwiseInverse().asDiagonal());
  cap.noalias() += uk->transpose() * (*base_inv_u);
  cap = Matrix(0.5 * (cap + cap.transpose()));
  auto cap_llt = std::make_shared<const Eigen::LLT<Matrix>>(cap);
  if (cap_llt->info() != Eigen::Success) {
    auto [idx, val] = detail::first_bad_pivot(cap);
    throw FactorizationError("spd_factorize_low_rank: capacitance is not positive definite",
                             idx, val);
  }
  const Vector cap_diag = cap_llt->matrixLLT().diagonal();
  const double cap_min = wk->size() > 0 ? cap_diag.minCoeff() * cap_diag.minCoeff() : 0.0;
  f.min_pivot = wk->size() > 0 ? std::min(f.wood_base->min_pivot, cap_min)
                               : f.wood_base->min_pivot;
  f.fill.input_nnz = base.nonZeros() + static_cast<Index>(uk->size());
  f.fill.factor_nnz = f.wood_base->fill.factor_nnz + static_cast<Index>(uk->size()) +
                      wk->size() * (wk->size() + 1) / 2;
  f.wood_u = uk;
  f.wood_w = wk;
  f.wood_base_inv_u = base_inv_u;
  f.wood_cap = cap_llt;
  return f;
}

/// Solves factor * X = rhs for a block of right-hand sides. Factorization
/// kinds always apply one step of iterative refinement; the unconditional
/// step keeps the solve a fixed linear map of the right-hand side (no
/// data-dependent branch), so residuals of linear identities cancel instead
/// of being limited by the factor's own accuracy. CG iterates to the
/// factor's relative-residual tolerance. A zero-column block is returned
/// unchanged.
inline Matrix spd_solve(const SpdFactor& factor, const Matrix& rhs) {
  if (rhs.rows() != factor.n) throw InvalidProblem("spd_solve: right-hand side rows mismatch");
  if (rhs.cols() == 0) return rhs;

  if (factor.kind == FactorKind::cg_operator) {
    Matrix x(rhs.rows(), rhs.cols());
    for (Index j = 0; j < rhs.cols(); ++j) x.col(j) = detail::pcg_solve(factor, rhs.col(j));
    return x;
  }

  Matrix x = detail::factor_solve_pass(factor, rhs);
  for (Index j = 0; j < rhs.cols(); ++j) {
    const Matrix residual = rhs.col(j) - factor.multiply(x.col(j));
    x.col(j) += detail::factor_solve_pass(factor, residual).col(0);
  }
  return x;
}

inline Vector spd_solve(const SpdFactor& factor, const Vector& rhs) {
  return Vector(spd_solve(factor, Matrix(rhs)));
}

/// Dense weighted Gram product B^T diag(w) B. The result is exactly
/// symmetric: transposed entries are bit-equal.
inline Matrix weighted_gram(const Matrix& b, const Vector& w) {
  if (w.size() != b.rows()) throw InvalidProblem("weighted_gram: weight size mismatch");
  Matrix t = b.transpose() * w.asDiagonal() * b;
  Matrix g = 0.5 * (t + t.transpose());
  return g;
}

/// Sparse weighted Gram product B^T diag(w) B with explicit zeros pruned.
/// Zero-weight rows are removed structurally before the product: the sparse
/// product is symbolic, so a skipped wide row would otherwise still allocate
/// its full fill pattern as explicit zeros.
inline SparseMatrix weighted_gram(const SparseMatrixRm& b, const Vector& w) {
  if (w.size() != b.rows()) throw InvalidProblem("weighted_gram: weight size mismatch");
  SparseMatrixRm filtered(b.rows(), b.cols());
  bool any_zero = false;
  for (Index r = 0; r < b.rows(); ++r) {
    if (w[r] == 0.0) {
      any_zero = true;
      break;
    }
  }
  if (any_zero) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(b.nonZeros()));
    for (Index r = 0; r < b.outerSize(); ++r) {
      if (w[r] == 0.0) continue;
      for (SparseMatrixRm::InnerIterator it(b, r); it; ++it) {
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      }
    }
    filtered.setFromTriplets(trips.begin(), trips.end());
  }
  SparseMatrix bc = any_zero ? SparseMatrix(filtered) : SparseMatrix(b);
  SparseMatrix g = SparseMatrix(bc.transpose() * w.asDiagonal() * bc).pruned();
  g.makeCompressed();
  return g;
}

struct IndefiniteSolveResult {
  Matrix x;
  /// Relative residual ||K x - rhs||_F / (1 + ||rhs||_F).
  double residual = 0.0;
  /// True when the damped least-squares fallback produced x.
  bool damped_fallback = false;
};

namespace detail {

inline double saddle_residual(const Matrix& k, const Matrix& x, const Matrix& rhs) {
  return (k * x - rhs).norm() / (1.0 + rhs.norm());
}

}  // namespace detail

/// Solves a square (possibly indefinite) dense system with partially pivoted
/// LU. Singular or numerically unreliable systems fall back to damped least
/// squares, minimizing ||K x - rhs||^2 + damping ||x||^2.
inline IndefiniteSolveResult indefinite_solve(const Matrix& k, const Matrix& rhs,
                                              double damping = 1e-10) {
  if (k.rows() != k.cols()) throw InvalidProblem("indefinite_solve: matrix must be square");
  if (rhs.rows() != k.rows()) throw InvalidProblem("indefinite_solve: right-hand side mismatch");
  IndefiniteSolveResult out;

  Eigen::PartialPivLU<Matrix> lu(k);
  const Vector u_diag = lu.matrixLU().diagonal().cwiseAbs();
  const double u_max = u_diag.size() > 0 ? u_diag.maxCoeff() : 0.0;
  const double u_min = u_diag.size() > 0 ? u_diag.minCoeff() : 0.0;
  const bool singular =
      !(u_max > 0.0) || u_min <= u_max * static_cast<double>(k.rows()) *
                                     std::numeric_limits<double>::epsilon();
  if (!singular) {
    out.x = lu.solve(rhs);
    out.residual = detail::saddle_residual(k, out.x, rhs);
    if (out.x.allFinite() && out.residual <= 1e-6) return out;
  }

  // Damped least squares on the normal equations.
  Matrix normal = k.transpose() * k;
  normal.diagonal().array() += damping;
  Eigen::LDLT<Matrix> ldlt(normal);
  out.x = ldlt.solve(k.transpose() * rhs);
  out.residual = detail::saddle_residual(k, out.x, rhs);
  out.damped_fallback = true;
  return out;
}

/// Sparse variant: supernodal LU with column reordering; the damped fallback
/// runs CG on the regularized normal equations without forming them.
inline IndefiniteSolveResult indefinite_solve(const SparseMatrix& k, const Matrix& rhs,
                                              double damping = 1e-10) {
  if (k.rows() != k.cols()) throw InvalidProblem("indefinite_solve: matrix must be square");
  if (rhs.rows() != k.rows()) throw InvalidProblem("indefinite_solve: right-hand side mismatch");
  IndefiniteSolveResult out;

  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(k);
  if (lu.info() == Eigen::Success) {
    out.x = lu.solve(rhs);
    const double rel = (k * out.x - rhs).norm() / (1.0 + rhs.norm());
    out.residual = rel;
    if (out.x.allFinite() && rel <= 1e-6) return out;
  }

  auto keep = std::make_shared<const SparseMatrix>(k);
  Vector col_norms(k.cols());
  for (Index j = 0; j < k.cols(); ++j) col_norms[j] = keep->col(j).squaredNorm() + damping;
  FactorOptions cg_opts;
  cg_opts.cg_tolerance = 1e-12;
  SpdFactor normal_op = spd_factorize_operator(
      [keep, damping](const Vector& v) {
        return Vector(keep->transpose() * ((*keep) * v) + damping * v);
      },
      col_norms, k.cols(), cg_opts);
  out.x.resize(k.cols(), rhs.cols());
  for (Index j = 0; j < rhs.cols(); ++j) {
    out.x.col(j) = spd_solve(normal_op, Vector(keep->transpose() * rhs.col(j)));
  }
  out.residual = (k * out.x - rhs).norm() / (1.0 + rhs.norm());
  out.damped_fallback = true;
  return out;
}

}  // namespace diffqp
