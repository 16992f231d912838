#include <catch2/catch_amalgamated.hpp>

#include "diffqp/benchgen.hpp"
#include "diffqp/problem.hpp"
#include "diffqp/solve.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace dq = diffqp;
using dq::Index;
using dq::Matrix;
using dq::Vector;

namespace {

dq::QpSolution solve_tight(const dq::QpProblem& problem) {
  dq::SolverSettings st;
  st.eps_abs = 1e-9;
  st.max_iterations = 400;
  const dq::QpSolution sol = dq::solve(problem, st);
  REQUIRE(sol.status == dq::SolveStatus::optimal);
  return sol;
}

bool bitwise_equal(const dq::BenchInstance& x, const dq::BenchInstance& y) {
  return x.problem.dense_p() == y.problem.dense_p() && x.problem.q == y.problem.q &&
         x.problem.dense_a() == y.problem.dense_a() && x.problem.b == y.problem.b &&
         x.problem.dense_c() == y.problem.dense_c() && x.problem.d == y.problem.d &&
         x.truth.z_star == y.truth.z_star && x.truth.data == y.truth.data;
}

}  // namespace

TEST_CASE("the normal sampler draws from the documented engine construction") {
  // uniform01 must equal the top 53 bits of one raw mt19937_64 draw; a fixed
  // seed therefore pins every generated instance bit for bit.
  dq::NormalSampler sampler(5489);
  std::mt19937_64 engine(5489);
  for (int i = 0; i < 16; ++i) {
    const double expected = static_cast<double>(engine() >> 11) * 0x1.0p-53;
    REQUIRE(sampler.uniform01() == expected);
  }
}

TEST_CASE("generators are bitwise deterministic in (family, size, seed)") {
  REQUIRE(bitwise_equal(dq::gen_random_qp(12, 5, 7), dq::gen_random_qp(12, 5, 7)));
  REQUIRE(bitwise_equal(dq::gen_simplex_projection(9, 3), dq::gen_simplex_projection(9, 3)));
  REQUIRE(bitwise_equal(dq::gen_chain_projection(6, 2, 4), dq::gen_chain_projection(6, 2, 4)));
  REQUIRE(bitwise_equal(dq::gen_portfolio_qp(2, 4, 10.0, 0.5, 9),
                        dq::gen_portfolio_qp(2, 4, 10.0, 0.5, 9)));
  // Different seeds must differ.
  REQUIRE_FALSE(bitwise_equal(dq::gen_random_qp(12, 5, 7), dq::gen_random_qp(12, 5, 8)));
}

TEST_CASE("random QP instances keep their stored feasibility identities") {
  const dq::BenchInstance inst = dq::gen_random_qp(18, 7, 3);
  const Index n = inst.problem.n;
  REQUIRE(inst.problem.p == 3);  // default p = max(1, m / 2)
  const Vector ones = Vector::Ones(n);
  // b and d were stored as A*ones and C*ones + 1: z = ones is strictly
  // feasible with unit slack (up to the rounding of the stored sums).
  REQUIRE(inst.problem.dense_a() * ones == inst.problem.b);
  REQUIRE((inst.problem.inequality_slack(ones).array() + 1.0).abs().maxCoeff() <= 1e-14);
  REQUIRE(dq::check_positive_definite(inst.problem));
}

TEST_CASE("simplex instances carry the sorted-threshold optimum") {
  const dq::BenchInstance inst = dq::gen_simplex_projection(40, 11);
  REQUIRE(inst.truth.has_z);
  // The oracle output is a valid simplex point.
  REQUIRE(inst.truth.z_star.sum() == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(inst.truth.z_star.minCoeff() >= 0.0);

  const dq::QpSolution sol = solve_tight(inst.problem);
  REQUIRE((sol.z_star - inst.truth.z_star).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("a one-dimensional simplex projection is the point one") {
  const dq::BenchInstance inst = dq::gen_simplex_projection(1, 2);
  REQUIRE(inst.truth.z_star[0] == Catch::Approx(1.0).margin(1e-12));
  const dq::QpSolution sol = solve_tight(inst.problem);
  REQUIRE(sol.z_star[0] == Catch::Approx(1.0).margin(1e-8));
}

TEST_CASE("chain instances couple consecutive points in paired rows") {
  const Index points = 6, dim = 2;
  const dq::BenchInstance inst = dq::gen_chain_projection(points, dim, 13);
  const Index pairs = (points - 1) * dim;
  REQUIRE(inst.problem.m == 2 * pairs);
  REQUIRE(inst.problem.p == 0);
  // Every coupling row has exactly two entries, +1/-1, and its negation
  // follows immediately.
  const Matrix c = inst.problem.dense_c();
  for (Index r = 0; r < inst.problem.m; r += 2) {
    REQUIRE((c.row(r).array() != 0.0).count() == 2);
    REQUIRE(c.row(r + 1) == (-c.row(r)).eval());
    REQUIRE(c.row(r).sum() == 0.0);
  }
  REQUIRE(inst.problem.d == Vector(Vector::Ones(2 * pairs)));
}

TEST_CASE("the dynamic-programming chain oracle matches hand solutions") {
  {
    // Two points (0, 10), step bound 1: symmetric pull to (4.5, 5.5).
    const std::vector<double> z = dq::detail::chain_projection_oracle_1d({0.0, 10.0}, 1.0);
    REQUIRE(z[0] == Catch::Approx(4.5).margin(1e-12));
    REQUIRE(z[1] == Catch::Approx(5.5).margin(1e-12));
  }
  {
    // Already feasible input is returned unchanged.
    const std::vector<double> z = dq::detail::chain_projection_oracle_1d({0.0, 0.5}, 1.0);
    REQUIRE(z[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(z[1] == Catch::Approx(0.5).margin(1e-12));
  }
  {
    // (0, 10, 0): both couplings bind; stationarity gives (3, 4, 3).
    const std::vector<double> z = dq::detail::chain_projection_oracle_1d({0.0, 10.0, 0.0}, 1.0);
    REQUIRE(z[0] == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(z[1] == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(z[2] == Catch::Approx(3.0).margin(1e-12));
  }
}

TEST_CASE("chain ground truth agrees with the solver") {
  const dq::BenchInstance inst = dq::gen_chain_projection(30, 2, 17);
  REQUIRE(inst.truth.has_z);
  const dq::QpSolution sol = solve_tight(inst.problem);
  REQUIRE((sol.z_star - inst.truth.z_star).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("portfolio instances have the documented block shapes and solve") {
  const Index horizon = 2, assets = 5;
  const dq::BenchInstance inst = dq::gen_portfolio_qp(horizon, assets, 10.0, 2.0, 19);
  const Index nh = horizon * assets;
  REQUIRE(inst.problem.n == 2 * nh);
  REQUIRE(inst.problem.p == horizon);
  REQUIRE(inst.problem.m == 4 * nh + horizon);
  REQUIRE(dq::check_positive_definite(inst.problem));

  const dq::QpSolution sol = solve_tight(inst.problem);
  // Each period's weights form a simplex point.
  for (Index k = 0; k < horizon; ++k) {
    REQUIRE(sol.z_star.segment(k * assets, assets).sum() == Catch::Approx(1.0).margin(1e-7));
    REQUIRE(sol.z_star.segment(k * assets, assets).minCoeff() >= -1e-7);
  }
  // A turnover budget of 2 can never strictly bind (total rebalancing mass
  // between two simplex points is at most 2), so its prices are zero.
  for (Index k = 0; k < horizon; ++k) {
    REQUIRE(std::abs(sol.mu_star[4 * nh + k]) <= 1e-7);
  }
}

TEST_CASE("generator parameter validation") {
  REQUIRE_THROWS_AS(dq::gen_chain_projection(1, 2, 0), dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::gen_portfolio_qp(0, 5, 10.0, 0.5, 0), dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::gen_portfolio_qp(2, 1, 10.0, 0.5, 0), dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::gen_portfolio_qp(2, 5, -1.0, 0.5, 0), dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::gen_portfolio_qp(2, 5, 10.0, 0.0, 0), dq::InvalidProblem);
}
