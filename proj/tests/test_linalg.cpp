#include <catch2/catch_amalgamated.hpp>

#include "diffqp/linalg.hpp"

#include <cmath>
#include <random>

namespace dq = diffqp;
using dq::Index;
using dq::Matrix;
using dq::Vector;

namespace {

Matrix random_spd(Index n, unsigned seed, double ridge = 0.5) {
  std::mt19937 eng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) a(i, j) = uni(eng);
  }
  return a * a.transpose() + ridge * Matrix::Identity(n, n);
}

// Pentadiagonal SPD matrix with strictly dominant diagonal.
dq::SparseMatrix banded_spd(Index n) {
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < n; ++i) {
    t.emplace_back(static_cast<int>(i), static_cast<int>(i), 5.0);
    if (i + 1 < n) {
      t.emplace_back(static_cast<int>(i), static_cast<int>(i + 1), -1.0);
      t.emplace_back(static_cast<int>(i + 1), static_cast<int>(i), -1.0);
    }
    if (i + 2 < n) {
      t.emplace_back(static_cast<int>(i), static_cast<int>(i + 2), 0.5);
      t.emplace_back(static_cast<int>(i + 2), static_cast<int>(i), 0.5);
    }
  }
  dq::SparseMatrix m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace

TEST_CASE("SPD solve reproduces a hand-inverted 2x2 system") {
  Matrix h(2, 2);
  h << 4.0, 1.0, 1.0, 3.0;  // inverse = [[3,-1],[-1,4]] / 11
  const dq::SpdFactor f = dq::spd_factorize(h);
  REQUIRE(f.kind == dq::FactorKind::dense_cholesky);
  Vector rhs(2);
  rhs << 1.0, 0.0;
  const Vector x = dq::spd_solve(f, rhs);
  REQUIRE(x[0] == Catch::Approx(3.0 / 11.0).epsilon(1e-14));
  REQUIRE(x[1] == Catch::Approx(-1.0 / 11.0).epsilon(1e-14));
}

TEST_CASE("non-positive-definite input reports the offending pivot") {
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1.0;
  try {
    dq::spd_factorize(bad);
    FAIL("expected FactorizationError");
  } catch (const dq::FactorizationError& e) {
    REQUIRE(e.pivot_index == 1);
    REQUIRE(e.pivot_value <= 0.0);
  }
  // Indefinite but with positive diagonal: [[1, 2], [2, 1]].
  Matrix indef(2, 2);
  indef << 1.0, 2.0, 2.0, 1.0;
  REQUIRE_THROWS_AS(dq::spd_factorize(indef), dq::FactorizationError);
}

TEST_CASE("min_pivot reports the smallest Cholesky pivot") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 4.0, 0.25, 9.0;
  const dq::SpdFactor f = dq::spd_factorize(d);
  REQUIRE(f.min_pivot == Catch::Approx(0.25).epsilon(1e-14));
  REQUIRE(dq::spd_factorize(Matrix::Identity(5, 5)).min_pivot == Catch::Approx(1.0));
}

TEST_CASE("solves agree across dense, sparse, and conjugate-gradient paths") {
  const Index n = 120;
  const dq::SparseMatrix sp = banded_spd(n);
  const Matrix dense = Matrix(sp);
  std::mt19937 eng(7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Vector rhs(n);
  for (Index i = 0; i < n; ++i) rhs[i] = uni(eng);

  const Vector x_dense = dq::spd_solve(dq::spd_factorize(dense), rhs);

  dq::FactorOptions sparse_opts;
  sparse_opts.strategy = dq::FactorStrategy::sparse_direct;
  const dq::SpdFactor f_sparse = dq::spd_factorize(sp, sparse_opts);
  REQUIRE(f_sparse.kind == dq::FactorKind::sparse_cholesky);
  REQUIRE(f_sparse.min_pivot > 0.0);
  const Vector x_sparse = dq::spd_solve(f_sparse, rhs);

  dq::FactorOptions cg_opts;
  cg_opts.strategy = dq::FactorStrategy::conjugate_gradient;
  const dq::SpdFactor f_cg = dq::spd_factorize(sp, cg_opts);
  REQUIRE(f_cg.kind == dq::FactorKind::cg_operator);
  const Vector x_cg = dq::spd_solve(f_cg, rhs);

  REQUIRE((x_sparse - x_dense).norm() / x_dense.norm() < 1e-12);
  REQUIRE((x_cg - x_dense).norm() / x_dense.norm() < 1e-8);
}

TEST_CASE("automatic strategy: small or dense input goes dense, large sparse goes direct") {
  // Small sparse matrix below the dense cutoff.
  REQUIRE(dq::spd_factorize(banded_spd(50)).kind == dq::FactorKind::dense_cholesky);

  // Large, very sparse matrix above the cutoff.
  const dq::SpdFactor f = dq::spd_factorize(banded_spd(800));
  REQUIRE(f.kind == dq::FactorKind::sparse_cholesky);
  // Banded pattern: fill stays modest.
  REQUIRE(f.fill.factor_nnz < 10 * f.fill.input_nnz);

  // Tiny memory budget forces the conjugate-gradient fallback.
  dq::FactorOptions tiny;
  tiny.memory_budget_bytes = 1024.0;
  REQUIRE(dq::spd_factorize(banded_spd(800), tiny).kind == dq::FactorKind::cg_operator);
}

TEST_CASE("matrix-free operator path solves diagonal-plus-rank-one systems") {
  const Index n = 300;
  const Vector diag = Vector::LinSpaced(n, 1.0, 4.0);
  const Vector u = Vector::LinSpaced(n, -1.0, 1.0);
  auto apply = [&](const Vector& x) { return Vector(diag.cwiseProduct(x) + u * (u.dot(x))); };
  const dq::SpdFactor f = dq::spd_factorize_operator(apply, diag, n);
  REQUIRE(f.kind == dq::FactorKind::cg_operator);

  Vector rhs = Vector::Ones(n);
  const Vector x = dq::spd_solve(f, rhs);
  const Vector residual = apply(x) - rhs;
  REQUIRE(residual.norm() <= 1e-9 * rhs.norm());

  // Same system solved densely.
  const Matrix dense = Matrix(diag.asDiagonal()) + u * u.transpose();
  const Vector x_dense = dq::spd_solve(dq::spd_factorize(dense), rhs);
  REQUIRE((x - x_dense).norm() / x_dense.norm() < 1e-8);
}

TEST_CASE("conjugate gradients reject an indefinite operator") {
  const Index n = 4;
  Vector diag(n);
  diag << 1.0, 1.0, -1.0, 1.0;
  auto apply = [diag](const Vector& x) { return Vector(diag.cwiseProduct(x)); };
  const dq::SpdFactor f = dq::spd_factorize_operator(apply, Vector::Ones(n), n);
  REQUIRE_THROWS_AS(dq::spd_solve(f, Vector(Vector::Ones(n))), dq::FactorizationError);
}

TEST_CASE("spd_solve contract: shape checks, empty blocks, multi-column") {
  const dq::SpdFactor f = dq::spd_factorize(Matrix(2.0 * Matrix::Identity(3, 3)));
  REQUIRE_THROWS_AS(dq::spd_solve(f, Vector(Vector::Ones(2))), dq::InvalidProblem);
  const Matrix empty(3, 0);
  REQUIRE(dq::spd_solve(f, empty).cols() == 0);
  Matrix rhs(3, 2);
  rhs << 2, 4, 6, 8, 10, 12;
  const Matrix x = dq::spd_solve(f, rhs);
  REQUIRE((x - 0.5 * rhs).norm() == 0.0);
}

TEST_CASE("weighted Gram products: frozen value, bitwise symmetry, sparse agreement") {
  // Single row (1, 1) with weight 2: B^T diag(w) B = [[2, 2], [2, 2]].
  Matrix b(1, 2);
  b << 1.0, 1.0;
  Vector w(1);
  w << 2.0;
  const Matrix g = dq::weighted_gram(b, w);
  REQUIRE(g(0, 0) == 2.0);
  REQUIRE(g(0, 1) == 2.0);
  REQUIRE(g(1, 0) == 2.0);
  REQUIRE(g(1, 1) == 2.0);

  // Bitwise symmetry on a random rectangular B.
  std::mt19937 eng(21);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  Matrix big(7, 5);
  Vector weights(7);
  for (Index i = 0; i < 7; ++i) {
    weights[i] = std::abs(uni(eng)) + 0.1;
    for (Index j = 0; j < 5; ++j) big(i, j) = uni(eng);
  }
  const Matrix gb = dq::weighted_gram(big, weights);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) REQUIRE(gb(i, j) == gb(j, i));
  }

  // Sparse result agrees with dense and drops zero-weight rows structurally.
  dq::SparseMatrixRm bs = big.sparseView();
  Vector wz = weights;
  wz[0] = 0.0;
  wz[3] = 0.0;
  const dq::SparseMatrix gs = dq::weighted_gram(bs, wz);
  const Matrix gd = dq::weighted_gram(big, wz);
  REQUIRE((Matrix(gs) - gd).norm() <= 1e-14 * gd.norm());

  // All-zero weights produce an empty pattern.
  const dq::SparseMatrix gz = dq::weighted_gram(bs, Vector(Vector::Zero(7)));
  REQUIRE(gz.nonZeros() == 0);

  REQUIRE_THROWS_AS(dq::weighted_gram(big, Vector(Vector::Ones(3))), dq::InvalidProblem);
}

TEST_CASE("saddle-point solve: direct path and damped fallback") {
  // [[I2, a], [a^T, 0]] with a = (1, 0): x = (rhs1 - nu*a, ...) hand check.
  Matrix k = Matrix::Zero(3, 3);
  k.topLeftCorner(2, 2).setIdentity();
  k(0, 2) = 1.0;
  k(2, 0) = 1.0;
  Matrix rhs(3, 1);
  rhs << 1.0, 2.0, 3.0;
  // Equations: x0 + x2 = 1; x1 = 2; x0 = 3 -> x = (3, 2, -2).
  const dq::IndefiniteSolveResult r = dq::indefinite_solve(k, rhs);
  REQUIRE_FALSE(r.damped_fallback);
  REQUIRE(r.x(0, 0) == Catch::Approx(3.0).epsilon(1e-12));
  REQUIRE(r.x(1, 0) == Catch::Approx(2.0).epsilon(1e-12));
  REQUIRE(r.x(2, 0) == Catch::Approx(-2.0).epsilon(1e-12));
  REQUIRE(r.residual <= 1e-12);

  // Exactly singular: duplicated rows/columns trigger the damped fallback and
  // return the least-squares solution of the consistent system.
  Matrix s(2, 2);
  s << 1.0, 1.0, 1.0, 1.0;
  Matrix rhs2(2, 1);
  rhs2 << 2.0, 2.0;
  const dq::IndefiniteSolveResult rs = dq::indefinite_solve(s, rhs2);
  REQUIRE(rs.damped_fallback);
  REQUIRE(rs.x.allFinite());
  REQUIRE(rs.x(0, 0) == Catch::Approx(1.0).epsilon(1e-6));
  REQUIRE(rs.x(1, 0) == Catch::Approx(1.0).epsilon(1e-6));

  REQUIRE_THROWS_AS(dq::indefinite_solve(Matrix::Zero(2, 3), rhs2), dq::InvalidProblem);
}

TEST_CASE("sparse saddle-point solve matches the dense path") {
  const Index n = 40;
  Matrix k = random_spd(n, 3);
  k.bottomRightCorner(10, 10).setZero();  // saddle block
  for (Index i = 0; i < 10; ++i) {
    k(n - 10 + i, i) = 1.0;
    k(i, n - 10 + i) = 1.0;
  }
  Matrix rhs(n, 2);
  std::mt19937 eng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    rhs(i, 0) = uni(eng);
    rhs(i, 1) = uni(eng);
  }
  const dq::SparseMatrix ks = k.sparseView();
  const dq::IndefiniteSolveResult dense = dq::indefinite_solve(k, rhs);
  const dq::IndefiniteSolveResult sparse = dq::indefinite_solve(ks, rhs);
  REQUIRE_FALSE(dense.damped_fallback);
  REQUIRE_FALSE(sparse.damped_fallback);
  REQUIRE((dense.x - sparse.x).norm() / dense.x.norm() < 1e-10);
}

TEST_CASE("refined solves keep residuals near machine precision on stiff systems") {
  // Condition number ~ 1e8, as produced by small smoothing parameters.
  const Index n = 60;
  Matrix h = random_spd(n, 11, 1e-2);
  Vector spike = Vector::Zero(n);
  spike[0] = 1.0;
  h += 1e6 * spike * spike.transpose();
  const dq::SpdFactor f = dq::spd_factorize(h);
  std::mt19937 eng(13);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Vector rhs(n);
  for (Index i = 0; i < n; ++i) rhs[i] = uni(eng);
  const Vector x = dq::spd_solve(f, rhs);
  REQUIRE((h * x - rhs).norm() <= 1e-11 * (1.0 + rhs.norm()));
}

TEST_CASE("low-rank update factors solve exactly like the explicit matrix") {
  const Index n = 300;
  const dq::SparseMatrix base = banded_spd(n);
  Matrix u(n, 2);
  for (Index i = 0; i < n; ++i) {
    u(i, 0) = 1.0;                        // a fully dense sum column
    u(i, 1) = (i % 2 == 0) ? 1.0 : -0.5;  // and an oscillating one
  }
  Vector w(2);
  w << 2.0e4, 0.5;  // strongly weighted rank-one term, as the Gram split produces

  const dq::SpdFactor f = dq::spd_factorize_low_rank(base, u, w);
  REQUIRE(f.kind == dq::FactorKind::woodbury);
  REQUIRE(f.min_pivot > 0.0);

  const Matrix dense = Matrix(base) + u * w.asDiagonal() * u.transpose();
  std::mt19937 eng(17);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Vector rhs(n);
  for (Index i = 0; i < n; ++i) rhs[i] = uni(eng);

  // multiply() applies base + U diag(w) U^T without forming it.
  const Vector probe = f.multiply(rhs);
  REQUIRE((probe - dense * rhs).norm() <= 1e-12 * probe.norm());

  const Vector x = dq::spd_solve(f, rhs);
  const Vector x_ref = dq::spd_solve(dq::spd_factorize(dense), rhs);
  REQUIRE((x - x_ref).norm() <= 1e-10 * x_ref.norm());
  REQUIRE((dense * x - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
}

TEST_CASE("low-rank update factor rejects malformed inputs") {
  const dq::SparseMatrix base = banded_spd(10);
  const Matrix u = Matrix::Ones(10, 1);
  Vector w(1);
  w << 1.0;

  Vector w_bad(1);
  w_bad << -1.0;
  REQUIRE_THROWS_AS(dq::spd_factorize_low_rank(base, u, w_bad), dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::spd_factorize_low_rank(base, Matrix::Ones(7, 1), w),
                    dq::InvalidProblem);
  REQUIRE_THROWS_AS(dq::spd_factorize_low_rank(base, u, Vector::Ones(2)),
                    dq::InvalidProblem);
}

TEST_CASE("weighted Gram skips zero-weight rows structurally") {
  // A zero-weight dense row must not contribute fill: the 3x3 result of
  // weighting only the sparse middle row is a single diagonal entry.
  std::vector<Eigen::Triplet<double>> t;
  for (Index j = 0; j < 3; ++j) t.emplace_back(0, static_cast<int>(j), 1.0);  // dense row
  t.emplace_back(1, 1, 2.0);
  dq::SparseMatrixRm b(2, 3);
  b.setFromTriplets(t.begin(), t.end());
  Vector w(2);
  w << 0.0, 3.0;
  const dq::SparseMatrix g = dq::weighted_gram(b, w);
  REQUIRE(g.nonZeros() == 1);
  REQUIRE(g.coeff(1, 1) == Catch::Approx(12.0));  // 3 * 2^2
}
