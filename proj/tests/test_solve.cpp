#include <catch2/catch_amalgamated.hpp>

#include "diffqp/benchgen.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/solve.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dq = diffqp;
using dq::Index;
using dq::Matrix;
using dq::Vector;

namespace {

dq::QpProblem simplex_projection_of(const Vector& x) {
  const Index n = x.size();
  const Matrix p = 2.0 * Matrix::Identity(n, n);
  const Vector q = -2.0 * x;
  const Matrix a = Matrix::Ones(1, n);
  Vector b(1);
  b << 1.0;
  const Matrix c = -Matrix::Identity(n, n);
  const Vector d = Vector::Zero(n);
  return dq::build_problem(p, q, a, b, c, d);
}

// Test-only reference solver: an operator-splitting (ADMM) method in the
// OSQP style, registered as an external adapter. Equalities are modeled as
// two-sided bounds l = u = b; the stacked dual y lands directly in the
// stationarity convention P z + q + A^T nu + C^T mu = 0.
dq::QpSolution admm_solve(const dq::QpProblem& problem, const dq::SolverSettings& st) {
  const Index n = problem.n;
  const Index p = problem.p;
  const Index m = problem.m;
  const Index k = p + m;

  Matrix stacked(k, n);
  if (p > 0) stacked.topRows(p) = problem.dense_a();
  if (m > 0) stacked.bottomRows(m) = problem.dense_c();
  Vector lower(k), upper(k);
  if (p > 0) {
    lower.head(p) = problem.b;
    upper.head(p) = problem.b;
  }
  for (Index i = 0; i < m; ++i) {
    lower[p + i] = -1e30;
    upper[p + i] = problem.d[i];
  }

  const double rho = 10.0;
  const double sigma = 1e-6;
  Matrix lhs = problem.dense_p() + sigma * Matrix::Identity(n, n);
  if (k > 0) lhs += rho * stacked.transpose() * stacked;
  Eigen::LLT<Matrix> llt(lhs);

  Vector x = Vector::Zero(n);
  Vector split = Vector::Zero(k);
  Vector y = Vector::Zero(k);

  dq::QpSolution out;
  out.status = dq::SolveStatus::max_iterations;
  for (Index it = 0; it < 200000; ++it) {
    Vector rhs = sigma * x - problem.q;
    if (k > 0) rhs += stacked.transpose() * (rho * split - y);
    x = llt.solve(rhs);
    if (k > 0) {
      const Vector v = stacked * x + y / rho;
      split = v.cwiseMax(lower).cwiseMin(upper);
      y += rho * (stacked * x - split);
    }
    if (it % 50 == 0) {
      const Vector nu = y.head(p);
      const Vector mu = Vector(y.tail(m)).cwiseMax(0.0);
      const dq::KktResiduals r = dq::compute_residuals(problem, x, nu, mu);
      if (std::max({r.primal, r.dual, r.complementarity}) <= st.eps_abs) {
        out.status = dq::SolveStatus::optimal;
        out.iterations = it;
        break;
      }
    }
  }
  out.z_star = x;
  out.nu_star = y.head(p);
  out.mu_star = Vector(y.tail(m)).cwiseMax(0.0);
  const dq::KktResiduals r = dq::compute_residuals(problem, out.z_star, out.nu_star, out.mu_star);
  out.primal_residual = r.primal;
  out.dual_residual = r.dual;
  out.complementarity_residual = r.complementarity;
  return out;
}

}  // namespace

TEST_CASE("unconstrained solve returns -P^{-1} q with empty duals") {
  const Matrix p = 2.0 * Matrix::Identity(2, 2);
  Vector q(2);
  q << -2.0, -4.0;
  const dq::QpProblem prob = dq::build_problem(p, q, Matrix(), Vector(), Matrix(), Vector());
  const dq::QpSolution sol = dq::solve(prob);
  REQUIRE(sol.status == dq::SolveStatus::optimal);
  REQUIRE(sol.z_star[0] == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(sol.z_star[1] == Catch::Approx(2.0).margin(1e-9));
  REQUIRE(sol.nu_star.size() == 0);
  REQUIRE(sol.mu_star.size() == 0);
}

TEST_CASE("a single box constraint clamps the optimum and prices it") {
  // Unconstrained optimum (1, 2); cap z2 <= 1.5. Stationarity then gives
  // mu = -(2 * 1.5 - 4) = 1 on the active row.
  const Matrix p = 2.0 * Matrix::Identity(2, 2);
  Vector q(2);
  q << -2.0, -4.0;
  Matrix c(1, 2);
  c << 0.0, 1.0;
  Vector d(1);
  d << 1.5;
  const dq::QpProblem prob = dq::build_problem(p, q, Matrix(), Vector(), c, d);
  const dq::QpSolution sol = dq::solve(prob);
  REQUIRE(sol.status == dq::SolveStatus::optimal);
  REQUIRE(sol.z_star[0] == Catch::Approx(1.0).margin(1e-7));
  REQUIRE(sol.z_star[1] == Catch::Approx(1.5).margin(1e-7));
  REQUIRE(sol.mu_star[0] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("equality-constrained solve recovers the multiplier sign convention") {
  // min 0.5 ||z||^2 s.t. z1 + z2 = 2: z* = (1,1), and
  // P z + q + A^T nu = 0 forces nu = -1.
  const Matrix p = Matrix::Identity(2, 2);
  Matrix a(1, 2);
  a << 1.0, 1.0;
  Vector b(1);
  b << 2.0;
  const dq::QpProblem prob = dq::build_problem(p, Vector::Zero(2), a, b, Matrix(), Vector());
  const dq::QpSolution sol = dq::solve(prob);
  REQUIRE(sol.status == dq::SolveStatus::optimal);
  REQUIRE(sol.z_star[0] == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(sol.z_star[1] == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(sol.nu_star[0] == Catch::Approx(-1.0).margin(1e-9));
}

TEST_CASE("two-point simplex projections solve to their analytic optima") {
  {
    Vector x(2);
    x << 0.6, 0.2;  // interior: z = x + (1 - sum x)/n * 1 = (0.7, 0.3)
    const dq::QpSolution sol = dq::solve(simplex_projection_of(x));
    REQUIRE(sol.status == dq::SolveStatus::optimal);
    REQUIRE(sol.z_star[0] == Catch::Approx(0.7).margin(1e-7));
    REQUIRE(sol.z_star[1] == Catch::Approx(0.3).margin(1e-7));
  }
  {
    Vector x(2);
    x << 2.0, -1.0;  // clipped: z = (1, 0)
    const dq::QpSolution sol = dq::solve(simplex_projection_of(x));
    REQUIRE(sol.status == dq::SolveStatus::optimal);
    REQUIRE(sol.z_star[0] == Catch::Approx(1.0).margin(1e-7));
    REQUIRE(sol.z_star[1] == Catch::Approx(0.0).margin(1e-7));
  }
}

TEST_CASE("active-set classification follows the threshold rule") {
  // Problems engineered so C z* - d equals the slack vector under test.
  const Matrix p = 2.0 * Matrix::Identity(2, 2);
  dq::QpSolution sol;
  sol.status = dq::SolveStatus::optimal;
  sol.z_star = Vector::Zero(2);

  SECTION("one active, one inactive, margin from the inactive row") {
    Vector d(2);
    d << 3e-6, 0.5;  // slack = -d at z = 0
    const dq::QpProblem prob =
        dq::build_problem(p, Vector::Zero(2), Matrix(), Vector(), Matrix::Identity(2, 2), d);
    const dq::ActiveSet as = dq::classify_active_set(prob, sol, 1e-5);
    REQUIRE(as.active == std::vector<Index>{0});
    REQUIRE(as.inactive == std::vector<Index>{1});
    REQUIRE(as.margin == Catch::Approx(0.5));
    REQUIRE(as.slack[0] == Catch::Approx(-3e-6));
  }
  SECTION("no inequality rows: empty partition, infinite margin") {
    const dq::QpProblem prob =
        dq::build_problem(p, Vector::Zero(2), Matrix(), Vector(), Matrix(), Vector());
    const dq::ActiveSet as = dq::classify_active_set(prob, sol, 1e-5);
    REQUIRE(as.active.empty());
    REQUIRE(as.inactive.empty());
    REQUIRE(std::isinf(as.margin));
  }
  SECTION("slack just below the threshold is inactive") {
    Vector d(1);
    d << 2e-5;
    const dq::QpProblem prob =
        dq::build_problem(p, Vector::Zero(2), Matrix(), Vector(), Matrix::Ones(1, 2), d);
    const dq::ActiveSet as = dq::classify_active_set(prob, sol, 1e-5);
    REQUIRE(as.active.empty());
    REQUIRE(as.inactive == std::vector<Index>{0});
    REQUIRE(as.margin == Catch::Approx(2e-5));
  }
  SECTION("slack exactly at -threshold counts as active") {
    Vector d(1);
    d << 1e-5;
    const dq::QpProblem prob =
        dq::build_problem(p, Vector::Zero(2), Matrix(), Vector(), Matrix::Ones(1, 2), d);
    const dq::ActiveSet as = dq::classify_active_set(prob, sol, 1e-5);
    REQUIRE(as.active == std::vector<Index>{0});
  }
  SECTION("nonpositive threshold is rejected") {
    const dq::QpProblem prob =
        dq::build_problem(p, Vector::Zero(2), Matrix(), Vector(), Matrix(), Vector());
    REQUIRE_THROWS_AS(dq::classify_active_set(prob, sol, 0.0), dq::InvalidProblem);
  }
}

TEST_CASE("penalty weights scale the largest multiplier and floor at one") {
  dq::QpSolution sol;
  sol.status = dq::SolveStatus::optimal;

  SECTION("zeta times the infinity norms") {
    sol.nu_star = Vector(2);
    sol.nu_star << 0.3, -2.0;
    sol.mu_star = Vector(2);
    sol.mu_star << 0.0, 1.5;
    const dq::PenaltyConfig pc = dq::set_penalty_weights(sol, 10.0);
    REQUIRE(pc.rho == Catch::Approx(20.0));
    REQUIRE(pc.alpha == Catch::Approx(15.0));
  }
  SECTION("zero multipliers hit the unit floor") {
    sol.nu_star = Vector::Zero(2);
    sol.mu_star = Vector::Zero(3);
    const dq::PenaltyConfig pc = dq::set_penalty_weights(sol, 10.0);
    REQUIRE(pc.rho == 1.0);
    REQUIRE(pc.alpha == 1.0);
  }
  SECTION("tiny multipliers also floor") {
    sol.nu_star = Vector(1);
    sol.nu_star << 1e-9;
    sol.mu_star = Vector(0);
    REQUIRE(dq::set_penalty_weights(sol, 10.0).rho == 1.0);
  }
  SECTION("base config fields pass through") {
    sol.nu_star = Vector(0);
    sol.mu_star = Vector(0);
    dq::PenaltyConfig base;
    base.delta = 1e-3;
    base.prune = false;
    const dq::PenaltyConfig pc = dq::set_penalty_weights(sol, 12.0, base);
    REQUIRE(pc.delta == 1e-3);
    REQUIRE_FALSE(pc.prune);
    REQUIRE(pc.zeta == 12.0);
  }
  SECTION("zeta below one is rejected") {
    sol.nu_star = Vector(0);
    sol.mu_star = Vector(0);
    REQUIRE_THROWS_AS(dq::set_penalty_weights(sol, 0.5), dq::InvalidProblem);
  }
}

TEST_CASE("optimal solutions satisfy dual feasibility and complementarity") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const dq::BenchInstance inst = dq::gen_random_qp(30, 10, seed);
    const dq::QpSolution sol = dq::solve(inst.problem);
    REQUIRE(sol.status == dq::SolveStatus::optimal);
    REQUIRE(sol.mu_star.minCoeff() >= -1e-6);
    const Vector slack = inst.problem.inequality_slack(sol.z_star);
    REQUIRE((sol.mu_star.array() * slack.array()).abs().maxCoeff() <= 1e-6);
    // Stationarity in the documented sign convention (catches sign errors).
    REQUIRE(sol.dual_residual <= 1e-6);
  }
}

TEST_CASE("tight tolerances are reachable with the polish step") {
  const dq::BenchInstance inst = dq::gen_random_qp(20, 6, 4);
  dq::SolverSettings st;
  st.eps_abs = 1e-10;
  st.max_iterations = 400;
  const dq::QpSolution sol = dq::solve(inst.problem, st);
  REQUIRE(sol.status == dq::SolveStatus::optimal);
  REQUIRE(std::max({sol.primal_residual, sol.dual_residual, sol.complementarity_residual}) <=
          1e-10);
}

TEST_CASE("iteration caps and contradictory constraints surface as statuses") {
  SECTION("iteration cap reports max_iterations") {
    const dq::BenchInstance inst = dq::gen_random_qp(20, 8, 5);
    dq::SolverSettings st;
    st.eps_abs = 1e-12;
    st.max_iterations = 1;
    st.polish = false;
    const dq::QpSolution sol = dq::solve(inst.problem, st);
    REQUIRE(sol.status == dq::SolveStatus::max_iterations);
  }
  SECTION("contradictory inequalities never report optimal") {
    // x <= -1 and -x <= -2 (x >= 2) cannot both hold.
    Matrix c(2, 1);
    c << 1.0, -1.0;
    Vector d(2);
    d << -1.0, -2.0;
    const dq::QpProblem prob = dq::build_problem(Matrix::Identity(1, 1), Vector::Zero(1),
                                                 Matrix(), Vector(), c, d);
    const dq::QpSolution sol = dq::solve(prob);
    REQUIRE(sol.status != dq::SolveStatus::optimal);
    REQUIRE((sol.status == dq::SolveStatus::infeasible ||
             sol.status == dq::SolveStatus::max_iterations));
  }
}

TEST_CASE("solver registry dispatches by name and rejects unknown choices") {
  const dq::BenchInstance inst = dq::gen_random_qp(10, 4, 6);

  dq::SolverSettings unknown;
  unknown.solver_choice = "no-such-solver";
  REQUIRE_THROWS_AS(dq::solve(inst.problem, unknown), dq::InvalidProblem);

  bool called = false;
  dq::register_solver("recording-stub", [&](const dq::QpProblem& pr, const dq::SolverSettings&) {
    called = true;
    dq::QpSolution out;
    out.status = dq::SolveStatus::numerical_failure;
    out.z_star = Vector::Zero(pr.n);
    return out;
  });
  dq::SolverSettings st;
  st.solver_choice = "recording-stub";
  const dq::QpSolution sol = dq::solve(inst.problem, st);
  REQUIRE(called);
  REQUIRE(sol.status == dq::SolveStatus::numerical_failure);
}

TEST_CASE("an independent operator-splitting adapter agrees on the optimum") {
  dq::register_solver("admm-reference", admm_solve);
  dq::SolverSettings admm_settings;
  admm_settings.solver_choice = "admm-reference";

  for (const auto& [n, m] : std::vector<std::pair<Index, Index>>{{10, 4}, {20, 8}, {50, 10}}) {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      const dq::BenchInstance inst = dq::gen_random_qp(n, m, seed);
      const dq::QpSolution ipm = dq::solve(inst.problem);
      const dq::QpSolution admm = dq::solve(inst.problem, admm_settings);
      REQUIRE(ipm.status == dq::SolveStatus::optimal);
      REQUIRE(admm.status == dq::SolveStatus::optimal);
      const double rel = (ipm.z_star - admm.z_star).norm() / ipm.z_star.norm();
      INFO("size " << n << "x" << m << " seed " << seed << " rel " << rel);
      REQUIRE(rel <= 1e-5);
    }
  }
}
