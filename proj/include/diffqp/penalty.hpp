#pragma once

/// Penalty-smoothed backward pass.
///
/// At a solved optimum the solution map is differentiated through an exact
/// penalty reformulation smoothed by the scaled softplus: equality and active
/// inequality rows (stacked as B = [A; C_active]) contribute the sharp term
/// (1/delta) B^T W B with W = diag(rho/2 * I_p, alpha/4 * I_a), inactive rows
/// contribute the exponentially small curvature
/// E = alpha * C_inactive^T diag(softplus''(slack)) C_inactive. The smoothed
/// Hessian
///
///   H = P + (1/delta) B^T W B + E
///
/// is SPD for any delta > 0, active-set degeneracy included. Sensitivities of
/// z* with respect to any data block solve H Z = -(G + (dB^T) y* +
/// (1/delta) B^T W g_theta + F), where G is the mixed objective Hessian,
/// y* = (nu*, mu*_active), g_theta differentiates the stacked constraint
/// residuals, and F collects the inactive-row softplus couplings. Pruning
/// (the default) drops E and F entirely; with the default delta they
/// underflow to zero anyway whenever the inactive margin is healthy.
///
/// Dual sensitivities are estimated as eta = (1/delta) W (B Z + g_theta).

#include "diffqp/linalg.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/softplus.hpp"
#include "diffqp/solve.hpp"
#include "diffqp/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

namespace diffqp {

/// Factorized (or operator-form) smoothed penalty Hessian plus the stacked
/// active constraint data needed by the sensitivity operations.
struct PenaltyHessian {
  Index n = 0;
  Index p = 0;                        ///< equality rows stacked first in B
  std::vector<Index> active;          ///< active inequality rows (ascending)
  double delta = 1e-6;
  double rho = 1.0;
  double alpha = 1.0;
  bool pruned = true;
  double margin = std::numeric_limits<double>::infinity();
  /// Set when margin < 10 delta log(1/delta): inactive rows are close enough
  /// to activation that the smoothed curvature may not be negligible.
  bool margin_warning = false;

  /// Stacked constraint Jacobian B = [A; C_active], in the problem's mode.
  bool dense_b = true;
  Matrix B_dense;
  SparseMatrixRm B_sparse;

  /// Row weights of (1/delta) W for the stacked B rows: rho/(2 delta) on the
  /// p equality rows, alpha/(4 delta) on the active rows.
  Vector w_over_delta;
  /// Per-inequality-row curvature weights appearing in H: alpha/(4 delta) on
  /// active rows, alpha * softplus''(slack) on inactive rows (zero when
  /// pruned or underflowed).
  Vector c_weights;
  /// alpha * softplus'(slack) per inequality row (zero on active rows; zero
  /// everywhere when pruned). Feeds the inactive-row gradient couplings.
  Vector c_first;

  SpdFactor factor;

  Index active_count() const { return static_cast<Index>(active.size()); }
  Index b_rows() const { return p + active_count(); }

  Matrix b_multiply(const Matrix& x) const {
    return dense_b ? Matrix(B_dense * x) : Matrix(B_sparse * x);
  }
  Vector b_multiply(const Vector& x) const {
    return dense_b ? Vector(B_dense * x) : Vector(B_sparse * x);
  }
  Vector b_transpose_multiply(const Vector& y) const {
    return dense_b ? Vector(B_dense.transpose() * y) : Vector(B_sparse.transpose() * y);
  }
};

enum class SensitivityMode { full_jacobian, vjp, jvp };

/// Sensitivity output; the payload matching `mode` is populated.
struct SensitivityResult {
  SensitivityMode mode = SensitivityMode::full_jacobian;
  Matrix jacobian;           ///< n x s (full_jacobian)
  DataGradient vjp_gradient; ///< per-datum loss gradient (vjp)
  Vector u;                  ///< adjoint solve H u = r (vjp intermediate)
  Vector jvp_result;         ///< z-dot (jvp)
};

/// Realized right-hand-side pieces for one data block with s parameters.
/// The system solved is H Z = -(G + dB_T_y + penalty_term + F_delta).
struct RhsAssembly {
  ParamBlock block = ParamBlock::q;
  Index s = 0;
  Matrix G;             ///< n x s, mixed objective Hessian d2f/dz dtheta
  Matrix dB_T_y;        ///< n x s, (d_theta B^T) y*
  Matrix penalty_term;  ///< n x s, (1/delta) B^T W g_theta
  Matrix F_delta;       ///< n x s, inactive softplus couplings; empty if none
  Vector y_star;        ///< (p + a) stacked (nu*, mu*_active)
  Matrix g_theta;       ///< (p + a) x s, d_theta of stacked residuals

  Matrix rhs() const {
    Matrix r = -(G + dB_T_y + penalty_term);
    if (F_delta.size() > 0) r -= F_delta;
    return r;
  }
};

namespace detail {

inline void validate_penalty_inputs(const QpProblem& problem, const QpSolution& solution,
                                    const ActiveSet& active_set, const PenaltyConfig& config) {
  if (!(config.delta > 0.0)) throw InvalidProblem("penalty: delta must be positive");
  if (!(config.rho > 0.0) || !(config.alpha > 0.0)) {
    throw InvalidProblem("penalty: weights must be positive");
  }
  if (solution.z_star.size() != problem.n) throw InvalidProblem("penalty: solution size mismatch");
  if (static_cast<Index>(active_set.slack.size()) != problem.m) {
    throw InvalidProblem("penalty: active-set slack size mismatch");
  }
}

/// Column sums of squared entries scaled by row weights: diag(M^T diag(w) M).
inline Vector weighted_column_squares(const QpProblem& problem, bool equality, const Vector& w) {
  Vector out = Vector::Zero(problem.n);
  if (problem.is_dense()) {
    const Matrix& mat = equality ? problem.A : problem.C;
    for (Index r = 0; r < mat.rows(); ++r) {
      if (w[r] == 0.0) continue;
      out += w[r] * mat.row(r).cwiseAbs2().transpose();
    }
  } else {
    const SparseMatrixRm& mat = equality ? problem.As : problem.Cs;
    for (Index r = 0; r < mat.outerSize(); ++r) {
      if (w[r] == 0.0) continue;
      for (SparseMatrixRm::InnerIterator it(mat, r); it; ++it) {
        out[it.col()] += w[r] * it.value() * it.value();
      }
    }
  }
  return out;
}

/// Upper bound on the explicit Gram fill: sum over weighted rows of nnz^2.
inline double projected_gram_entries(const QpProblem& problem, const Vector& a_w,
                                     const Vector& c_w) {
  double total = 0.0;
  if (problem.is_dense()) {
    const double nd = static_cast<double>(problem.n);
    for (Index r = 0; r < problem.p; ++r) {
      if (a_w[r] != 0.0) total += nd * nd;
    }
    for (Index r = 0; r < problem.m; ++r) {
      if (c_w[r] != 0.0) total += nd * nd;
    }
    return total;
  }
  for (Index r = 0; r < problem.p; ++r) {
    if (a_w[r] == 0.0) continue;
    const double k = static_cast<double>(problem.As.outerIndexPtr()[r + 1] -
                                         problem.As.outerIndexPtr()[r]);
    total += k * k;
  }
  for (Index r = 0; r < problem.m; ++r) {
    if (c_w[r] == 0.0) continue;
    const double k = static_cast<double>(problem.Cs.outerIndexPtr()[r + 1] -
                                         problem.Cs.outerIndexPtr()[r]);
    total += k * k;
  }
  return total;
}

/// One inequality row of C as a dense row vector.
inline Matrix dense_row(const QpProblem& problem, Index i) {
  if (problem.is_dense()) return problem.C.row(i);
  return Matrix(problem.Cs.row(i));
}

/// One sparse row scattered into a dense column vector.
inline Vector scatter_row(const SparseMatrixRm& mat, Index r, Index n) {
  Vector out = Vector::Zero(n);
  for (SparseMatrixRm::InnerIterator it(mat, r); it; ++it) out[it.col()] = it.value();
  return out;
}

inline Index sparse_row_nnz(const SparseMatrixRm& mat, Index r) {
  return mat.outerIndexPtr()[r + 1] - mat.outerIndexPtr()[r];
}

inline void build_stacked_b(const QpProblem& problem, PenaltyHessian& h) {
  const Index a = h.active_count();
  h.dense_b = problem.is_dense();
  if (h.dense_b) {
    h.B_dense.resize(h.p + a, problem.n);
    if (h.p > 0) h.B_dense.topRows(h.p) = problem.A;
    for (Index k = 0; k < a; ++k) {
      h.B_dense.row(h.p + k) = problem.C.row(h.active[static_cast<size_t>(k)]);
    }
    return;
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(problem.As.nonZeros()) + h.active.size() * 4);
  for (Index r = 0; r < problem.As.outerSize(); ++r) {
    for (SparseMatrixRm::InnerIterator it(problem.As, r); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    }
  }
  for (Index k = 0; k < a; ++k) {
    const Index i = h.active[static_cast<size_t>(k)];
    for (SparseMatrixRm::InnerIterator it(problem.Cs, i); it; ++it) {
      trips.emplace_back(static_cast<int>(h.p + k), static_cast<int>(it.col()), it.value());
    }
  }
  h.B_sparse.resize(h.p + a, problem.n);
  h.B_sparse.setFromTriplets(trips.begin(), trips.end());
  h.B_sparse.makeCompressed();
}

}  // namespace detail

/// Builds and factorizes the smoothed penalty Hessian. Representation is
/// chosen automatically: dense problems assemble densely; sparse problems
/// assemble an explicit sparse Gram, splitting a few wide constraint rows
/// into a low-rank Woodbury correction so they cannot densify the factor;
/// if the projected Gram fill still exceeds the factorization memory budget,
/// H is kept as a matrix-free operator and solved by preconditioned CG.
inline PenaltyHessian assemble_hessian(const QpProblem& problem, const QpSolution& solution,
                                       const ActiveSet& active_set, const PenaltyConfig& config,
                                       const FactorOptions& factor_options = {}) {
  detail::validate_penalty_inputs(problem, solution, active_set, config);

  PenaltyHessian h;
  h.n = problem.n;
  h.p = problem.p;
  h.active = active_set.active;
  h.delta = config.delta;
  h.rho = config.rho;
  h.alpha = config.alpha;
  h.pruned = config.prune;
  h.margin = active_set.margin;
  if (config.delta < 1.0 && std::isfinite(h.margin)) {
    h.margin_warning = h.margin < 10.0 * config.delta * std::log(1.0 / config.delta);
  }

  const Index a = h.active_count();
  const double aw = config.rho / (2.0 * config.delta);
  const double cw = config.alpha / (4.0 * config.delta);
  h.w_over_delta.resize(h.p + a);
  h.w_over_delta.head(h.p).setConstant(aw);
  h.w_over_delta.tail(a).setConstant(cw);

  h.c_weights = Vector::Zero(problem.m);
  h.c_first = Vector::Zero(problem.m);
  for (Index i : active_set.active) h.c_weights[i] = cw;
  if (!config.prune) {
    for (Index i : active_set.inactive) {
      const SoftplusEval sp = softplus_eval(active_set.slack[i], config.delta);
      h.c_weights[i] = config.alpha * sp.second;
      h.c_first[i] = config.alpha * sp.first;
    }
  }

  detail::build_stacked_b(problem, h);

  const Vector a_weights = Vector::Constant(problem.p, aw);

  if (problem.is_dense()) {
    Matrix hm = problem.P;
    if (problem.p > 0) hm += weighted_gram(problem.A, a_weights);
    if (problem.m > 0) hm += weighted_gram(problem.C, h.c_weights);
    h.factor = spd_factorize(hm, factor_options);
    return h;
  }

  // Wide constraint rows (sum constraints, budget rows) are split out of the
  // explicit Gram: a row with k nonzeros costs k^2 Gram entries but only one
  // dense column as a low-rank Woodbury update, so a single dense row never
  // turns B^T W B dense. Rows stay in the Gram below the break-even width;
  // if an unusual problem has very many wide rows, splitting stops paying
  // (r dense columns plus an r x r capacitance), so the choice falls back to
  // the operator path below.
  std::vector<Index> split_a;
  std::vector<Index> split_c;
  Vector a_weights_kept = a_weights;
  Vector c_weights_kept = h.c_weights;
  if (problem.n > factor_options.dense_cutoff) {
    const double split_gate = 8.0 * static_cast<double>(problem.n);
    for (Index r = 0; r < problem.p; ++r) {
      const double k = static_cast<double>(detail::sparse_row_nnz(problem.As, r));
      if (k * k > split_gate) split_a.push_back(r);
    }
    for (Index r = 0; r < problem.m; ++r) {
      if (h.c_weights[r] == 0.0) continue;
      const double k = static_cast<double>(detail::sparse_row_nnz(problem.Cs, r));
      if (k * k > split_gate) split_c.push_back(r);
    }
    if (split_a.size() + split_c.size() > 64) {
      split_a.clear();
      split_c.clear();
    }
    for (Index r : split_a) a_weights_kept[r] = 0.0;
    for (Index r : split_c) c_weights_kept[r] = 0.0;
  }

  const double budget_entries = factor_options.memory_budget_bytes / 16.0;
  const double projected =
      detail::projected_gram_entries(problem, a_weights_kept, c_weights_kept) +
      static_cast<double>(problem.Ps.nonZeros());
  if (projected > budget_entries) {
    auto keep = std::make_shared<const QpProblem>(problem);
    auto cweights = std::make_shared<const Vector>(h.c_weights);
    const double aw_copy = aw;
    LinearOperator apply = [keep, cweights, aw_copy](const Vector& v) {
      Vector out = keep->multiply_p(v);
      if (keep->p > 0) out += aw_copy * keep->multiply_at(keep->multiply_a(v));
      if (keep->m > 0) {
        out += keep->multiply_ct(cweights->cwiseProduct(keep->multiply_c(v)));
      }
      return out;
    };
    Vector diag = problem.p_diagonal();
    diag += detail::weighted_column_squares(problem, true, a_weights);
    diag += detail::weighted_column_squares(problem, false, h.c_weights);
    h.factor = spd_factorize_operator(std::move(apply), std::move(diag), problem.n,
                                      factor_options);
    return h;
  }

  SparseMatrix hm = SparseMatrix(problem.Ps);
  if (problem.p > 0) hm = SparseMatrix(hm + weighted_gram(problem.As, a_weights_kept));
  if (problem.m > 0) hm = SparseMatrix(hm + weighted_gram(problem.Cs, c_weights_kept));
  hm.makeCompressed();

  const Index splits = static_cast<Index>(split_a.size() + split_c.size());
  if (splits == 0) {
    h.factor = spd_factorize(hm, factor_options);
    return h;
  }
  Matrix u(problem.n, splits);
  Vector uw(splits);
  Index col = 0;
  for (Index r : split_a) {
    u.col(col) = detail::scatter_row(problem.As, r, problem.n);
    uw[col] = aw;
    ++col;
  }
  for (Index r : split_c) {
    u.col(col) = detail::scatter_row(problem.Cs, r, problem.n);
    uw[col] = h.c_weights[r];
    ++col;
  }
  h.factor = spd_factorize_low_rank(hm, std::move(u), std::move(uw), factor_options);
  return h;
}

/// Realizes the right-hand-side pieces for one data block. Column layouts:
/// q and b use natural indexing; d uses one column per inequality row
/// (inactive columns carry only the softplus coupling and vanish when
/// pruned); A and C use row-major entry order (row * n + col); P uses the
/// upper-triangle pairs (j, k), j <= k, in row-major order, where each
/// parameter perturbs P(j,k) and P(k,j) jointly.
inline RhsAssembly assemble_rhs(const QpProblem& problem, const QpSolution& solution,
                                const ActiveSet& active_set, const PenaltyConfig& config,
                                ParamBlock block) {
  detail::validate_penalty_inputs(problem, solution, active_set, config);
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(active_set.active.size());
  const double aw = config.rho / (2.0 * config.delta);
  const double cw = config.alpha / (4.0 * config.delta);
  const Vector& z = solution.z_star;

  RhsAssembly out;
  out.block = block;
  out.y_star.resize(p + a);
  out.y_star.head(p) = solution.nu_star;
  for (Index k = 0; k < a; ++k) out.y_star[p + k] = solution.mu_star[active_set.active[k]];

  auto zeros = [&](Index s) {
    out.s = s;
    out.G = Matrix::Zero(n, s);
    out.dB_T_y = Matrix::Zero(n, s);
    out.penalty_term = Matrix::Zero(n, s);
    out.g_theta = Matrix::Zero(p + a, s);
  };

  switch (block) {
    case ParamBlock::q: {
      zeros(n);
      out.G = Matrix::Identity(n, n);
      break;
    }
    case ParamBlock::b: {
      zeros(p);
      for (Index j = 0; j < p; ++j) out.g_theta(j, j) = -1.0;
      if (p > 0) {
        out.penalty_term = -aw * problem.dense_a().transpose();
      }
      break;
    }
    case ParamBlock::d: {
      zeros(problem.m);
      const Matrix ct = problem.dense_c().transpose();
      for (Index k = 0; k < a; ++k) {
        const Index i = active_set.active[k];
        out.g_theta(p + k, i) = -1.0;
        out.penalty_term.col(i) = -cw * ct.col(i);
      }
      if (!config.prune && active_set.inactive.size() > 0) {
        out.F_delta = Matrix::Zero(n, problem.m);
        for (Index i : active_set.inactive) {
          const SoftplusEval sp = softplus_eval(active_set.slack[i], config.delta);
          if (sp.second != 0.0) out.F_delta.col(i) = -config.alpha * sp.second * ct.col(i);
        }
      }
      break;
    }
    case ParamBlock::A: {
      zeros(p * n);
      const Matrix at = problem.dense_a().transpose();
      for (Index j = 0; j < p; ++j) {
        for (Index k = 0; k < n; ++k) {
          const Index col = j * n + k;
          out.dB_T_y(k, col) = solution.nu_star[j];
          out.g_theta(j, col) = z[k];
          out.penalty_term.col(col) = (aw * z[k]) * at.col(j);
        }
      }
      break;
    }
    case ParamBlock::C: {
      zeros(problem.m * n);
      const Matrix ct = problem.dense_c().transpose();
      for (Index kpos = 0; kpos < a; ++kpos) {
        const Index i = active_set.active[kpos];
        const double mu_i = solution.mu_star[i];
        for (Index k = 0; k < n; ++k) {
          const Index col = i * n + k;
          out.dB_T_y(k, col) = mu_i;
          out.g_theta(p + kpos, col) = z[k];
          out.penalty_term.col(col) = (cw * z[k]) * ct.col(i);
        }
      }
      if (!config.prune && active_set.inactive.size() > 0) {
        out.F_delta = Matrix::Zero(n, problem.m * n);
        for (Index i : active_set.inactive) {
          const SoftplusEval sp = softplus_eval(active_set.slack[i], config.delta);
          if (sp.first == 0.0 && sp.second == 0.0) continue;
          for (Index k = 0; k < n; ++k) {
            const Index col = i * n + k;
            out.F_delta(k, col) += config.alpha * sp.first;
            if (sp.second != 0.0) {
              out.F_delta.col(col) += (config.alpha * sp.second * z[k]) * ct.col(i);
            }
          }
        }
      }
      break;
    }
    case ParamBlock::P: {
      const Index s = n * (n + 1) / 2;
      zeros(s);
      Index col = 0;
      for (Index j = 0; j < n; ++j) {
        for (Index k = j; k < n; ++k, ++col) {
          out.G(j, col) += z[k];
          if (k != j) out.G(k, col) += z[j];
        }
      }
      break;
    }
  }
  return out;
}

/// Solves H Z = rhs for the realized block; Z estimates d z* / d theta.
inline SensitivityResult solve_jacobian(const PenaltyHessian& hessian, const RhsAssembly& rhs) {
  SensitivityResult out;
  out.mode = SensitivityMode::full_jacobian;
  out.jacobian = spd_solve(hessian.factor, rhs.rhs());
  return out;
}

/// Dual sensitivity estimate eta = (1/delta) W (B Z + g_theta), rows ordered
/// as (equalities, active rows). Estimates d y* / d theta.
inline Matrix dual_sensitivity(const PenaltyHessian& hessian, const RhsAssembly& rhs,
                               const Matrix& jacobian) {
  if (hessian.b_rows() == 0) return Matrix(0, jacobian.cols());
  return hessian.w_over_delta.asDiagonal() * (hessian.b_multiply(jacobian) + rhs.g_theta);
}

/// Vector-Jacobian product: for upstream gradient r, solves H u = r once and
/// expands the loss gradient for every requested data block in closed form.
/// Cost is one solve plus O(data) regardless of the parameter count.
inline SensitivityResult vjp(const PenaltyHessian& hessian, const QpProblem& problem,
                             const QpSolution& solution, const ActiveSet& active_set,
                             const PenaltyConfig& config, const Vector& r,
                             const BlockMask& mask = BlockMask::all()) {
  detail::validate_penalty_inputs(problem, solution, active_set, config);
  if (r.size() != problem.n) throw InvalidProblem("vjp: upstream gradient size mismatch");

  SensitivityResult out;
  out.mode = SensitivityMode::vjp;
  out.u = spd_solve(hessian.factor, r);
  const Vector& u = out.u;
  const Vector& z = solution.z_star;
  const Index p = problem.p;
  const double aw = config.rho / (2.0 * config.delta);
  const double cw = config.alpha / (4.0 * config.delta);

  DataGradient& g = out.vjp_gradient;
  const Vector bu = hessian.b_rows() > 0 ? hessian.b_multiply(u) : Vector(0);
  const bool need_full_cu = !config.prune && (mask.d || mask.C) && !active_set.inactive.empty();
  const Vector cu = need_full_cu ? problem.multiply_c(u) : Vector(0);

  if (mask.q) g.dq = -u;
  if (mask.b && p > 0) g.db = aw * bu.head(p);
  if (mask.d && problem.m > 0) {
    g.dd = Vector::Zero(problem.m);
    for (Index k = 0; k < hessian.active_count(); ++k) {
      g.dd[hessian.active[static_cast<size_t>(k)]] = cw * bu[p + k];
    }
    if (need_full_cu) {
      for (Index i : active_set.inactive) {
        if (hessian.c_weights[i] != 0.0) g.dd[i] = hessian.c_weights[i] * cu[i];
      }
    }
  }
  if (mask.P) {
    Matrix raw = -u * z.transpose();
    g.dP = 0.5 * (raw + raw.transpose());
  }
  if (mask.A && p > 0) {
    g.dA = -(solution.nu_star * u.transpose() + (aw * bu.head(p)) * z.transpose());
  }
  if (mask.C && problem.m > 0) {
    g.dC = Matrix::Zero(problem.m, problem.n);
    for (Index k = 0; k < hessian.active_count(); ++k) {
      const Index i = hessian.active[static_cast<size_t>(k)];
      g.dC.row(i) = -(solution.mu_star[i] * u.transpose() + cw * bu[p + k] * z.transpose());
    }
    if (need_full_cu) {
      for (Index i : active_set.inactive) {
        if (hessian.c_first[i] == 0.0 && hessian.c_weights[i] == 0.0) continue;
        g.dC.row(i) =
            -(hessian.c_first[i] * u.transpose() + hessian.c_weights[i] * cu[i] * z.transpose());
      }
    }
  }
  return out;
}

/// Jacobian-vector product: contracts the sensitivity operator with a data
/// direction (empty blocks are zero) through one solve, H z-dot = -R(dir).
inline SensitivityResult jvp(const PenaltyHessian& hessian, const QpProblem& problem,
                             const QpSolution& solution, const ActiveSet& active_set,
                             const PenaltyConfig& config, const DataGradient& direction) {
  detail::validate_penalty_inputs(problem, solution, active_set, config);
  const Index n = problem.n;
  const Index p = problem.p;
  const Vector& z = solution.z_star;

  Vector rhs = Vector::Zero(n);
  if (direction.dP.size() > 0) {
    const Matrix sym = 0.5 * (direction.dP + direction.dP.transpose());
    rhs += sym * z;
  }
  if (direction.dq.size() > 0) rhs += direction.dq;

  const bool has_da = direction.dA.size() > 0;
  const bool has_db = direction.db.size() > 0;
  const bool has_dc = direction.dC.size() > 0;
  const bool has_dd = direction.dd.size() > 0;

  if (has_da) rhs += direction.dA.transpose() * solution.nu_star;
  if (has_dc) {
    for (Index k = 0; k < hessian.active_count(); ++k) {
      const Index i = hessian.active[static_cast<size_t>(k)];
      rhs += solution.mu_star[i] * direction.dC.row(i).transpose();
    }
  }

  // Sharp term: B^T (1/delta) W g_dir with g_dir the stacked residual
  // directional derivative.
  if (hessian.b_rows() > 0) {
    Vector g_dir = Vector::Zero(hessian.b_rows());
    if (p > 0) {
      if (has_da) g_dir.head(p) += direction.dA * z;
      if (has_db) g_dir.head(p) -= direction.db;
    }
    for (Index k = 0; k < hessian.active_count(); ++k) {
      const Index i = hessian.active[static_cast<size_t>(k)];
      if (has_dc) g_dir[p + k] += direction.dC.row(i).dot(z);
      if (has_dd) g_dir[p + k] -= direction.dd[i];
    }
    rhs += hessian.b_transpose_multiply(hessian.w_over_delta.cwiseProduct(g_dir));
  }

  if (!config.prune) {
    for (Index i : active_set.inactive) {
      if (has_dc && hessian.c_first[i] != 0.0) {
        rhs += hessian.c_first[i] * direction.dC.row(i).transpose();
      }
      if (hessian.c_weights[i] != 0.0) {
        double res_dir = 0.0;
        if (has_dc) res_dir += direction.dC.row(i).dot(z);
        if (has_dd) res_dir -= direction.dd[i];
        if (res_dir != 0.0) {
          rhs += hessian.c_weights[i] * res_dir * detail::dense_row(problem, i).transpose();
        }
      }
    }
  }

  SensitivityResult out;
  out.mode = SensitivityMode::jvp;
  out.jvp_result = spd_solve(hessian.factor, Vector(-rhs));
  return out;
}

/// Directional dual sensitivity for a jvp result: (1/delta) W (B z-dot + g_dir).
inline Vector dual_sensitivity_direction(const PenaltyHessian& hessian, const QpSolution& solution,
                                         const DataGradient& direction, const Vector& z_dot) {
  const Index p = hessian.p;
  const Index a = hessian.active_count();
  if (p + a == 0) return Vector(0);
  const Vector& z = solution.z_star;
  Vector g_dir = Vector::Zero(p + a);
  if (p > 0) {
    if (direction.dA.size() > 0) g_dir.head(p) += direction.dA * z;
    if (direction.db.size() > 0) g_dir.head(p) -= direction.db;
  }
  for (Index k = 0; k < a; ++k) {
    const Index i = hessian.active[static_cast<size_t>(k)];
    if (direction.dC.size() > 0) g_dir[p + k] += direction.dC.row(i).dot(z);
    if (direction.dd.size() > 0) g_dir[p + k] -= direction.dd[i];
  }
  return hessian.w_over_delta.cwiseProduct(hessian.b_multiply(z_dot) + g_dir);
}

/// Exact penalty value F(z) = f(z) + rho ||A z - b||_1 + alpha ||(C z - d)+||_1.
inline double penalty_value(const QpProblem& problem, const Vector& z, double rho, double alpha) {
  double f = problem.objective(z);
  if (problem.p > 0) f += rho * (problem.multiply_a(z) - problem.b).lpNorm<1>();
  if (problem.m > 0) f += alpha * problem.inequality_slack(z).cwiseMax(0.0).sum();
  return f;
}

}  // namespace diffqp
