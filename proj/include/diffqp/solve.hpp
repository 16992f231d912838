#pragma once

/// Forward QP solver.
///
/// The built-in solver is a Mehrotra predictor-corrector interior-point
/// method with two backends: dense problems eliminate the inequality block
/// and solve the equality block through an SPD Schur complement; sparse
/// problems factorize the regularized quasi-definite KKT matrix with a
/// no-pivoting sparse LDLT (pattern analyzed once). A final polish step
/// re-solves the saddle system on the guessed active set, which typically
/// reaches residuals far below the interior-point floor; the polished point
/// is kept only when it improves the worst residual. External solvers plug
/// in through a name -> callable registry and are selected by
/// SolverSettings::solver_choice.

#include "diffqp/linalg.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/types.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace diffqp {

struct SolverSettings {
  double eps_abs = 1e-6;              ///< absolute residual tolerance
  Index max_iterations = 200;
  double regularization_floor = 1e-10;
  std::string solver_choice = "builtin-ipm";
  bool polish = true;                 ///< attempt an active-set polish solve
};

/// Partition of inequality rows at an optimum. Rows with slack >= -threshold
/// count as active (a slack of exactly -threshold is active); margin is the
/// smallest violation distance min(-slack) over inactive rows, +infinity when
/// every row is active or m = 0.
struct ActiveSet {
  std::vector<Index> active;
  std::vector<Index> inactive;
  Vector slack;  ///< C z* - d for all m rows
  double margin = std::numeric_limits<double>::infinity();
  double threshold = 1e-5;
};

/// Weights and sharpness for the penalty-based backward pass. rho scales the
/// equality penalty, alpha the inequality penalty; prune drops inactive-row
/// curvature and coupling terms.
struct PenaltyConfig {
  double delta = 1e-6;
  double zeta = 10.0;
  double rho = 1.0;
  double alpha = 1.0;
  bool prune = true;
};

inline ActiveSet classify_active_set(const QpProblem& problem, const QpSolution& solution,
                                     double eps_active = 1e-5) {
  if (!(eps_active > 0.0)) throw InvalidProblem("classify_active_set: eps_active must be positive");
  ActiveSet out;
  out.threshold = eps_active;
  out.slack = problem.m > 0 ? problem.inequality_slack(solution.z_star) : Vector(0);
  for (Index i = 0; i < problem.m; ++i) {
    if (out.slack[i] >= -eps_active) {
      out.active.push_back(i);
    } else {
      out.inactive.push_back(i);
      out.margin = std::min(out.margin, -out.slack[i]);
    }
  }
  return out;
}

/// Sets rho = max(zeta ||nu*||_inf, 1) and alpha = max(zeta ||mu*||_inf, 1),
/// keeping delta and prune from the base config. The unit floor keeps
/// zero-multiplier problems on a well-scaled penalty.
inline PenaltyConfig set_penalty_weights(const QpSolution& solution, double zeta,
                                         const PenaltyConfig& base = {}) {
  if (!(zeta >= 1.0)) throw InvalidProblem("set_penalty_weights: zeta must be at least 1");
  PenaltyConfig out = base;
  out.zeta = zeta;
  const double nu_inf = solution.nu_star.size() > 0 ? solution.nu_star.cwiseAbs().maxCoeff() : 0.0;
  const double mu_inf = solution.mu_star.size() > 0 ? solution.mu_star.cwiseAbs().maxCoeff() : 0.0;
  out.rho = std::max(zeta * nu_inf, 1.0);
  out.alpha = std::max(zeta * mu_inf, 1.0);
  return out;
}

namespace detail {

inline double step_to_boundary(const Vector& x, const Vector& dx, double cap) {
  double alpha = cap;
  for (Index i = 0; i < x.size(); ++i) {
    if (dx[i] < 0.0) alpha = std::min(alpha, -x[i] / dx[i]);
  }
  return alpha;
}

/// One factorization of the reduced Newton matrix, reused by the predictor
/// and corrector solves of a single interior-point iteration.
class NewtonSystem {
 public:
  NewtonSystem(const QpProblem& problem, double reg) : problem_(problem), reg_(reg) {}

  void factorize(const Vector& D) {
    const Index n = problem_.n;
    const Index p = problem_.p;
    if (problem_.is_dense()) {
      Matrix M = problem_.P;
      if (problem_.m > 0) {
        const Matrix scaled = D.cwiseSqrt().asDiagonal() * problem_.C;
        M.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
        M = M.selfadjointView<Eigen::Lower>();
      }
      M.diagonal().array() += reg_;
      llt_m_.compute(M);
      if (llt_m_.info() != Eigen::Success) {
        M.diagonal().array() += 1e-8 * (1.0 + M.diagonal().cwiseAbs().maxCoeff());
        llt_m_.compute(M);
      }
      ok_ = llt_m_.info() == Eigen::Success;
      if (ok_ && p > 0) {
        const Matrix At = problem_.A.transpose();
        const Matrix MiAt = llt_m_.solve(At);
        Matrix schur = problem_.A * MiAt;
        schur = 0.5 * (schur + schur.transpose());
        schur.diagonal().array() += reg_;
        llt_s_.compute(schur);
        ok_ = llt_s_.info() == Eigen::Success;
      }
      return;
    }

    // Sparse backend: regularized quasi-definite augmented matrix.
    std::vector<Eigen::Triplet<double>> trips;
    SparseMatrix ctdc;
    if (problem_.m > 0) {
      SparseMatrix c_cm = problem_.Cs;
      ctdc = SparseMatrix(c_cm.transpose() * D.asDiagonal() * c_cm).pruned();
    }
    trips.reserve(static_cast<size_t>(problem_.Ps.nonZeros() + ctdc.nonZeros() +
                                      2 * problem_.As.nonZeros() + n + p));
    for (Index r = 0; r < problem_.Ps.outerSize(); ++r) {
      for (SparseMatrixRm::InnerIterator it(problem_.Ps, r); it; ++it) {
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
      }
    }
    if (ctdc.nonZeros() > 0) {
      for (Index c = 0; c < ctdc.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(ctdc, c); it; ++it) {
          trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        }
      }
    }
    for (Index i = 0; i < n; ++i) trips.emplace_back(static_cast<int>(i), static_cast<int>(i), reg_);
    for (Index r = 0; r < problem_.As.outerSize(); ++r) {
      for (SparseMatrixRm::InnerIterator it(problem_.As, r); it; ++it) {
        trips.emplace_back(static_cast<int>(n + it.row()), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + it.row()), it.value());
      }
    }
    for (Index i = 0; i < p; ++i) {
      trips.emplace_back(static_cast<int>(n + i), static_cast<int>(n + i), -reg_);
    }
    SparseMatrix K(n + p, n + p);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();
    if (!analyzed_) {
      ldlt_.analyzePattern(K);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    ok_ = ldlt_.info() == Eigen::Success;
    if (ok_) k_ = std::move(K);
  }

  bool ok() const { return ok_; }

  /// Solves [[M, A^T], [A, 0]] [dz; dnu] = [f; g] for the current scaling.
  void solve(const Vector& f, const Vector& g, Vector& dz, Vector& dnu) const {
    const Index n = problem_.n;
    const Index p = problem_.p;
    if (problem_.is_dense()) {
      if (p > 0) {
        const Vector mif = llt_m_.solve(f);
        dnu = llt_s_.solve(problem_.A * mif - g);
        dz = llt_m_.solve(f - problem_.A.transpose() * dnu);
      } else {
        dnu.resize(0);
        dz = llt_m_.solve(f);
      }
      return;
    }
    Vector rhs(n + p);
    rhs.head(n) = f;
    rhs.tail(p) = g;
    Vector sol = ldlt_.solve(rhs);
    // One refinement step against the regularized matrix.
    sol += ldlt_.solve(rhs - k_ * sol);
    dz = sol.head(n);
    dnu = sol.tail(p);
  }

 private:
  const QpProblem& problem_;
  double reg_;
  bool ok_ = false;
  bool analyzed_ = false;
  Eigen::LLT<Matrix> llt_m_;
  Eigen::LLT<Matrix> llt_s_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  SparseMatrix k_;
};

/// Re-solves the KKT saddle system on a guessed active set. Returns true and
/// overwrites (z, nu, mu) when the polished triple has a smaller worst
/// residual than the current one.
inline bool polish_solution(const QpProblem& problem, Vector& z, Vector& nu, Vector& mu,
                            const Vector& s, double damping) {
  std::vector<Index> guess;
  for (Index i = 0; i < problem.m; ++i) {
    if (mu[i] > s[i]) guess.push_back(i);
  }
  const Index n = problem.n;
  const Index p = problem.p;
  const Index a = static_cast<Index>(guess.size());

  Vector rhs(n + p + a);
  rhs.head(n) = -problem.q;
  rhs.segment(n, p) = problem.b;
  for (Index k = 0; k < a; ++k) rhs[n + p + k] = problem.d[guess[static_cast<size_t>(k)]];

  Matrix x;
  if (problem.is_dense()) {
    Matrix kkt = Matrix::Zero(n + p + a, n + p + a);
    kkt.topLeftCorner(n, n) = problem.P;
    if (p > 0) {
      kkt.block(0, n, n, p) = problem.A.transpose();
      kkt.block(n, 0, p, n) = problem.A;
    }
    for (Index k = 0; k < a; ++k) {
      kkt.block(0, n + p + k, n, 1) = problem.C.row(guess[static_cast<size_t>(k)]).transpose();
      kkt.block(n + p + k, 0, 1, n) = problem.C.row(guess[static_cast<size_t>(k)]);
    }
    x = indefinite_solve(kkt, Matrix(rhs), damping).x;
  } else {
    std::vector<Eigen::Triplet<double>> trips;
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
      const Index row = guess[static_cast<size_t>(k)];
      for (SparseMatrixRm::InnerIterator it(problem.Cs, row); it; ++it) {
        trips.emplace_back(static_cast<int>(n + p + k), static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + p + k), it.value());
      }
    }
    SparseMatrix kkt(n + p + a, n + p + a);
    kkt.setFromTriplets(trips.begin(), trips.end());
    kkt.makeCompressed();
    x = indefinite_solve(kkt, Matrix(rhs), damping).x;
  }
  if (!x.allFinite()) return false;

  Vector z_new = x.col(0).head(n);
  Vector nu_new = x.col(0).segment(n, p);
  Vector mu_new = Vector::Zero(problem.m);
  for (Index k = 0; k < a; ++k) mu_new[guess[static_cast<size_t>(k)]] = x.col(0)[n + p + k];
  if (problem.m > 0 && mu_new.minCoeff() < -1e-8) return false;

  const KktResiduals before = compute_residuals(problem, z, nu, mu);
  const KktResiduals after = compute_residuals(problem, z_new, nu_new, mu_new);
  const double worst_before = std::max({before.primal, before.dual, before.complementarity});
  const double worst_after = std::max({after.primal, after.dual, after.complementarity});
  if (worst_after >= worst_before) return false;
  z = std::move(z_new);
  nu = std::move(nu_new);
  mu = std::move(mu_new);
  return true;
}

}  // namespace detail

/// SPD factorization of P in the problem's storage mode.
inline SpdFactor spd_factorize_for_problem(const QpProblem& problem) {
  if (problem.is_dense()) return spd_factorize(problem.P);
  return spd_factorize(SparseMatrix(problem.Ps));
}

/// Built-in interior-point solve; see the header comment for the algorithm.
inline QpSolution builtin_ipm_solve(const QpProblem& problem, const SolverSettings& settings) {
  const auto t_start = std::chrono::steady_clock::now();
  const Index n = problem.n;
  const Index p = problem.p;
  const Index m = problem.m;
  const double eps = settings.eps_abs;

  QpSolution out;
  auto finish = [&](SolveStatus status, const Vector& z, const Vector& nu, const Vector& mu,
                    Index iters) {
    out.status = status;
    out.z_star = z;
    out.nu_star = nu;
    out.mu_star = mu;
    const KktResiduals r = compute_residuals(problem, z, nu, mu);
    out.primal_residual = r.primal;
    out.dual_residual = r.dual;
    out.complementarity_residual = r.complementarity;
    out.iterations = iters;
    out.solve_time_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t_start)
                            .count();
    if (status == SolveStatus::optimal &&
        std::max({r.primal, r.dual, r.complementarity}) > eps) {
      out.status = SolveStatus::max_iterations;
    }
    return out;
  };

  const double reg = std::max(settings.regularization_floor, 1e-12);

  // Equality-only and unconstrained problems reduce to one linear solve.
  if (m == 0) {
    Vector z, nu(0);
    if (p == 0) {
      SpdFactor f = spd_factorize_for_problem(problem);
      z = spd_solve(f, Vector(-problem.q));
    } else {
      const Index dim = n + p;
      Vector rhs(dim);
      rhs.head(n) = -problem.q;
      rhs.tail(p) = problem.b;
      Matrix x;
      if (problem.is_dense()) {
        Matrix kkt = Matrix::Zero(dim, dim);
        kkt.topLeftCorner(n, n) = problem.P;
        kkt.block(0, n, n, p) = problem.A.transpose();
        kkt.block(n, 0, p, n) = problem.A;
        x = indefinite_solve(kkt, Matrix(rhs), reg).x;
      } else {
        std::vector<Eigen::Triplet<double>> trips;
        for (Index r = 0; r < problem.Ps.outerSize(); ++r) {
          for (SparseMatrixRm::InnerIterator it(problem.Ps, r); it; ++it) {
            trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
          }
        }
        for (Index r = 0; r < problem.As.outerSize(); ++r) {
          for (SparseMatrixRm::InnerIterator it(problem.As, r); it; ++it) {
            trips.emplace_back(static_cast<int>(n + it.row()), static_cast<int>(it.col()),
                               it.value());
            trips.emplace_back(static_cast<int>(it.col()), static_cast<int>(n + it.row()),
                               it.value());
          }
        }
        SparseMatrix kkt(dim, dim);
        kkt.setFromTriplets(trips.begin(), trips.end());
        x = indefinite_solve(kkt, Matrix(rhs), reg).x;
      }
      z = x.col(0).head(n);
      nu = x.col(0).tail(p);
    }
    if (!z.allFinite()) return finish(SolveStatus::numerical_failure, Vector::Zero(n), Vector::Zero(p), Vector(0), 1);
    return finish(SolveStatus::optimal, z, nu, Vector(0), 1);
  }

  // Starting point: equality-regularized solve for z, unit slack floor.
  Vector z = Vector::Zero(n);
  Vector nu = Vector::Zero(p);
  {
    detail::NewtonSystem init(problem, std::max(reg, 1e-9));
    init.factorize(Vector::Zero(m));
    if (init.ok()) {
      Vector dz, dnu;
      init.solve(Vector(-problem.q), problem.b, dz, dnu);
      if (dz.allFinite()) {
        z = dz;
        if (p > 0 && dnu.allFinite()) nu = dnu;
      }
    }
  }
  Vector s = (problem.d - problem.multiply_c(z)).cwiseMax(1.0);
  Vector mu = Vector::Ones(m);

  detail::NewtonSystem newton(problem, reg);
  const double dual_blowup = 1e10 * (1.0 + mu.cwiseAbs().maxCoeff());
  Index iter = 0;
  bool converged = false;

  for (; iter < settings.max_iterations; ++iter) {
    const KktResiduals res = compute_residuals(problem, z, nu, mu);
    if (std::max({res.primal, res.dual, res.complementarity}) <= eps) {
      converged = true;
      break;
    }
    if (!z.allFinite() || !mu.allFinite() || !nu.allFinite()) {
      return finish(SolveStatus::numerical_failure, z, nu, mu, iter);
    }
    const double dual_norm = std::max(mu.cwiseAbs().maxCoeff(),
                                      p > 0 ? nu.cwiseAbs().maxCoeff() : 0.0);
    if (dual_norm > dual_blowup && res.primal > std::max(100.0 * eps, 1e-8)) {
      return finish(SolveStatus::infeasible, z, nu, mu, iter);
    }

    // Residuals of the perturbed KKT system in the internal variables.
    Vector rd = problem.multiply_p(z) + problem.q + problem.multiply_ct(mu);
    if (p > 0) rd += problem.multiply_at(nu);
    const Vector rp = p > 0 ? Vector(problem.multiply_a(z) - problem.b) : Vector(0);
    const Vector rc = problem.multiply_c(z) + s - problem.d;
    const double gap = s.dot(mu) / static_cast<double>(m);

    const Vector D = mu.cwiseQuotient(s);
    newton.factorize(D);
    if (!newton.ok()) return finish(SolveStatus::numerical_failure, z, nu, mu, iter);

    auto solve_direction = [&](const Vector& rs, Vector& dz, Vector& dnu, Vector& ds,
                               Vector& dmu) {
      const Vector w = D.asDiagonal() * rc - rs.cwiseQuotient(s);
      const Vector f = -rd - problem.multiply_ct(w);
      const Vector g = p > 0 ? Vector(-rp) : Vector(0);
      newton.solve(f, g, dz, dnu);
      ds = -rc - problem.multiply_c(dz);
      dmu = w + D.asDiagonal() * problem.multiply_c(dz);
    };

    // Predictor (affine scaling) direction.
    Vector dz_a, dnu_a, ds_a, dmu_a;
    solve_direction(Vector(s.cwiseProduct(mu)), dz_a, dnu_a, ds_a, dmu_a);
    const double alpha_p_a = detail::step_to_boundary(s, ds_a, 1.0);
    const double alpha_d_a = detail::step_to_boundary(mu, dmu_a, 1.0);
    const double gap_aff = (s + alpha_p_a * ds_a).dot(mu + alpha_d_a * dmu_a) /
                           static_cast<double>(m);
    double sigma = gap > 0.0 ? std::pow(gap_aff / gap, 3) : 0.0;
    sigma = std::clamp(sigma, 0.0, 1.0);

    // Corrector with centering.
    Vector rs_cc = s.cwiseProduct(mu) + ds_a.cwiseProduct(dmu_a);
    rs_cc.array() -= sigma * gap;
    Vector dz, dnu, ds, dmu;
    solve_direction(rs_cc, dz, dnu, ds, dmu);

    const double tau = 0.995;
    const double alpha = std::min(tau * detail::step_to_boundary(s, ds, 1.0 / tau),
                                  tau * detail::step_to_boundary(mu, dmu, 1.0 / tau));
    z += alpha * dz;
    if (p > 0) nu += alpha * dnu;
    s += alpha * ds;
    mu += alpha * dmu;
    // Keep the iterate strictly interior.
    s = s.cwiseMax(1e-300);
    mu = mu.cwiseMax(1e-300);
  }

  if (settings.polish) {
    detail::polish_solution(problem, z, nu, mu, s, reg);
  }
  const KktResiduals res = compute_residuals(problem, z, nu, mu);
  const bool at_tol = std::max({res.primal, res.dual, res.complementarity}) <= eps;
  return finish(at_tol ? SolveStatus::optimal : (converged ? SolveStatus::optimal : SolveStatus::max_iterations),
                z, nu, mu, iter);
}

using SolverFn = std::function<QpSolution(const QpProblem&, const SolverSettings&)>;

/// Name -> solver table. "builtin-ipm" is always present. Registration is not
/// thread-safe; concurrent solves through registered entries are.
inline std::map<std::string, SolverFn>& solver_registry() {
  static std::map<std::string, SolverFn> registry{
      {"builtin-ipm", [](const QpProblem& pr, const SolverSettings& st) {
         return builtin_ipm_solve(pr, st);
       }}};
  return registry;
}

inline void register_solver(const std::string& name, SolverFn fn) {
  solver_registry()[name] = std::move(fn);
}

/// Solves through the adapter selected by settings.solver_choice.
inline QpSolution solve(const QpProblem& problem, const SolverSettings& settings = {}) {
  const auto& registry = solver_registry();
  const auto it = registry.find(settings.solver_choice);
  if (it == registry.end()) {
    throw InvalidProblem("solve: unknown solver_choice '" + settings.solver_choice + "'");
  }
  return it->second(problem, settings);
}

}  // namespace diffqp
