#pragma once

/// Deterministic benchmark instance generators with analytic ground truth
/// where available.
///
/// Randomness: std::mt19937_64 (bit-exact output pinned by the C++ standard)
/// seeded directly with the instance seed. Normal variates use the polar
/// Box-Muller transform on uniforms built from the top 53 bits of each draw;
/// the transform is documented here and fixed for the release. Each
/// generator documents its draw order, so instances are reproducible from
/// (family, size, seed) alone.

#include "diffqp/problem.hpp"
#include "diffqp/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace diffqp {

/// Seedable normal/uniform sampler: mt19937_64 + polar Box-Muller.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) from the top 53 bits of one engine draw.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via the polar method; caches the paired variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Fills a matrix row by row (row-major draw order).
  void fill_normal(Matrix& mat) {
    for (Index i = 0; i < mat.rows(); ++i) {
      for (Index j = 0; j < mat.cols(); ++j) mat(i, j) = normal();
    }
  }

  void fill_normal(Vector& vec) {
    for (Index i = 0; i < vec.size(); ++i) vec[i] = normal();
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Analytic reference solution attached to generated instances.
struct GroundTruth {
  bool has_z = false;
  Vector z_star;     ///< analytic optimum when has_z
  Vector data;       ///< family-specific input (projection target, returns, ...)
  std::string note;  ///< how the truth was computed / why it is absent
};

/// A generated benchmark problem plus provenance.
struct BenchInstance {
  QpProblem problem;
  std::string family;             ///< random_qp | simplex | chain | portfolio
  std::vector<Index> size_desc;   ///< family-specific size integers
  std::uint64_t seed = 0;
  GroundTruth truth;
};

/// Dense random strictly convex QP. Draw order: P0 (n x n, row major), q,
/// A (p x n, row major), C (m x n, row major). P = P0 P0^T + 1e-6 I. The
/// right-hand sides are the stored expressions b = A * ones and
/// d = C * ones + ones, so z = ones is strictly feasible with unit slack.
inline BenchInstance gen_random_qp(Index n, Index m, std::uint64_t seed, Index p = -1) {
  if (p < 0) p = std::max<Index>(1, m / 2);
  NormalSampler rng(seed);
  Matrix p0(n, n);
  rng.fill_normal(p0);
  Vector q(n);
  rng.fill_normal(q);
  Matrix a(p, n);
  rng.fill_normal(a);
  Matrix c(m, n);
  rng.fill_normal(c);

  Matrix pm = p0 * p0.transpose() + 1e-6 * Matrix::Identity(n, n);
  const Vector ones = Vector::Ones(n);
  const Vector b = a * ones;
  const Vector d = c * ones + Vector::Ones(m);

  BenchInstance inst;
  inst.problem = build_problem(pm, q, a, b, c, d);
  inst.family = "random_qp";
  inst.size_desc = {n, m};
  inst.seed = seed;
  inst.truth.note = "no closed form; z = ones is strictly feasible with unit slack";
  return inst;
}

/// Sorted-threshold solution of min ||z - x||^2 over the probability simplex.
inline Vector simplex_projection_oracle(const Vector& x) {
  const Index n = x.size();
  std::vector<double> u(x.data(), x.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (Index k = 0; k < n; ++k) {
    cumsum += u[static_cast<size_t>(k)];
    const double candidate = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<size_t>(k)] - candidate > 0.0) tau = candidate;
  }
  return (x.array() - tau).cwiseMax(0.0);
}

/// Projection of a normal point onto the probability simplex, phrased as a
/// sparse QP: P = 2 I, q = -2 x, one equality row of ones (sum z = 1), and
/// 2n box rows ordered lower bounds first (-z_i <= 0 at row i) then upper
/// bounds (z_i <= 1 at row n + i). Draw order: x only. Ground truth is the
/// sorted-threshold solution.
inline BenchInstance gen_simplex_projection(Index n, std::uint64_t seed) {
  NormalSampler rng(seed);
  Vector x(n);
  rng.fill_normal(x);

  std::vector<Eigen::Triplet<double>> pt, at, ct;
  for (Index i = 0; i < n; ++i) pt.emplace_back(static_cast<int>(i), static_cast<int>(i), 2.0);
  for (Index i = 0; i < n; ++i) at.emplace_back(0, static_cast<int>(i), 1.0);
  for (Index i = 0; i < n; ++i) {
    ct.emplace_back(static_cast<int>(i), static_cast<int>(i), -1.0);
    ct.emplace_back(static_cast<int>(n + i), static_cast<int>(i), 1.0);
  }
  SparseMatrixRm ps(n, n), as(1, n), cs(2 * n, n);
  ps.setFromTriplets(pt.begin(), pt.end());
  as.setFromTriplets(at.begin(), at.end());
  cs.setFromTriplets(ct.begin(), ct.end());

  Vector d(2 * n);
  d.head(n).setZero();
  d.tail(n).setOnes();

  BenchInstance inst;
  inst.problem = build_problem(ps, Vector(-2.0 * x), as, Vector::Ones(1), cs, d);
  inst.family = "simplex";
  inst.size_desc = {n};
  inst.seed = seed;
  inst.truth.has_z = true;
  inst.truth.z_star = simplex_projection_oracle(x);
  inst.truth.data = x;
  inst.truth.note = "sorted-threshold simplex projection";
  return inst;
}

namespace detail {

/// Piecewise-linear nondecreasing function (derivative of a convex
/// piecewise-quadratic value function): knot positions, values at knots,
/// and the constant slopes outside / linear interpolation inside.
struct PwLinear {
  std::vector<double> xs;
  std::vector<double> vals;
  double slope_left = 0.0;
  double slope_right = 0.0;

  double eval(double x) const {
    if (xs.empty()) return slope_left * x;  // unused; functions always have knots here
    if (x <= xs.front()) return vals.front() + slope_left * (x - xs.front());
    if (x >= xs.back()) return vals.back() + slope_right * (x - xs.back());
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    const size_t hi = static_cast<size_t>(it - xs.begin());
    const size_t lo = hi - 1;
    const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return vals[lo] + t * (vals[hi] - vals[lo]);
  }

  /// Root of this nondecreasing function (argmin of the value function).
  double root() const {
    if (vals.empty() || vals.front() >= 0.0) {
      const double v0 = vals.empty() ? 0.0 : vals.front();
      const double x0 = xs.empty() ? 0.0 : xs.front();
      return x0 - v0 / slope_left;
    }
    if (vals.back() <= 0.0) return xs.back() - vals.back() / slope_right;
    for (size_t i = 1; i < xs.size(); ++i) {
      if (vals[i] >= 0.0) {
        if (vals[i] == vals[i - 1]) return xs[i - 1];
        const double t = -vals[i - 1] / (vals[i] - vals[i - 1]);
        return xs[i - 1] + t * (xs[i] - xs[i - 1]);
      }
    }
    return xs.back();
  }
};

/// Exact 1-d chain projection: minimize sum (z_j - x_j)^2 subject to
/// |z_j - z_{j+1}| <= width, by forward-backward dynamic programming on
/// convex piecewise-quadratic value functions (derivatives kept piecewise
/// linear; the inf-convolution with the coupling box clamps the derivative
/// to zero on a window of width 2 * width around the stage minimizer).
inline std::vector<double> chain_projection_oracle_1d(const std::vector<double>& x, double width) {
  const size_t t = x.size();
  std::vector<double> argmins(t);
  PwLinear deriv;  // derivative of stage value function V_j
  deriv.xs = {x[0]};
  deriv.vals = {0.0};
  deriv.slope_left = deriv.slope_right = 2.0;
  argmins[0] = x[0];

  for (size_t j = 1; j < t; ++j) {
    const double ystar = deriv.root();
    argmins[j - 1] = ystar;
    // m'(z) = V'(z + width) left of the window, 0 inside, V'(z - width) right.
    PwLinear m;
    for (size_t i = 0; i < deriv.xs.size(); ++i) {
      if (deriv.xs[i] < ystar && deriv.vals[i] < 0.0) {
        m.xs.push_back(deriv.xs[i] - width);
        m.vals.push_back(deriv.vals[i]);
      }
    }
    m.xs.push_back(ystar - width);
    m.vals.push_back(0.0);
    m.xs.push_back(ystar + width);
    m.vals.push_back(0.0);
    for (size_t i = 0; i < deriv.xs.size(); ++i) {
      if (deriv.xs[i] > ystar && deriv.vals[i] > 0.0) {
        m.xs.push_back(deriv.xs[i] + width);
        m.vals.push_back(deriv.vals[i]);
      }
    }
    m.slope_left = deriv.slope_left;
    m.slope_right = deriv.slope_right;
    // V_j'(z) = 2 (z - x_j) + m'(z): add the linear term at every knot.
    deriv = std::move(m);
    for (size_t i = 0; i < deriv.xs.size(); ++i) deriv.vals[i] += 2.0 * (deriv.xs[i] - x[j]);
    deriv.slope_left += 2.0;
    deriv.slope_right += 2.0;
  }
  argmins[t - 1] = deriv.root();

  std::vector<double> z(t);
  z[t - 1] = argmins[t - 1];
  for (size_t j = t - 1; j-- > 0;) {
    z[j] = std::clamp(argmins[j], z[j + 1] - width, z[j + 1] + width);
  }
  return z;
}

}  // namespace detail

/// Projection of a path of points onto the set of chains with bounded
/// per-step movement: minimize ||z - x||^2 subject to
/// |z_{j,c} - z_{j+1,c}| <= 1 componentwise. Variables are stacked point
/// major (z_{j,c} at index j * dim + c). Inequality rows come in pairs per
/// (j, c), ordered j major then c, "+" difference first: row 2 (j dim + c)
/// encodes z_{j,c} - z_{j+1,c} <= 1 and the next row its negation. Draw
/// order: x (points x dim, row major), scaled by 10 so couplings activate.
/// Ground truth is the per-coordinate dynamic-programming chain projection.
inline BenchInstance gen_chain_projection(Index points, Index dim, std::uint64_t seed) {
  if (points < 2) throw InvalidProblem("gen_chain_projection: need at least 2 points");
  NormalSampler rng(seed);
  const Index n = points * dim;
  Vector x(n);
  rng.fill_normal(x);
  x *= 10.0;

  std::vector<Eigen::Triplet<double>> pt, ct;
  for (Index i = 0; i < n; ++i) pt.emplace_back(static_cast<int>(i), static_cast<int>(i), 2.0);
  const Index pairs = (points - 1) * dim;
  for (Index j = 0; j + 1 < points; ++j) {
    for (Index c = 0; c < dim; ++c) {
      const Index pair = j * dim + c;
      const int row_plus = static_cast<int>(2 * pair);
      const int lhs = static_cast<int>(j * dim + c);
      const int rhs = static_cast<int>((j + 1) * dim + c);
      ct.emplace_back(row_plus, lhs, 1.0);
      ct.emplace_back(row_plus, rhs, -1.0);
      ct.emplace_back(row_plus + 1, lhs, -1.0);
      ct.emplace_back(row_plus + 1, rhs, 1.0);
    }
  }
  SparseMatrixRm ps(n, n), as(0, n), cs(2 * pairs, n);
  ps.setFromTriplets(pt.begin(), pt.end());
  cs.setFromTriplets(ct.begin(), ct.end());

  BenchInstance inst;
  inst.problem = build_problem(ps, Vector(-2.0 * x), as, Vector(0), cs,
                               Vector(Vector::Ones(2 * pairs)));
  inst.family = "chain";
  inst.size_desc = {points, dim};
  inst.seed = seed;
  inst.truth.has_z = true;
  inst.truth.z_star.resize(n);
  for (Index c = 0; c < dim; ++c) {
    std::vector<double> coord(static_cast<size_t>(points));
    for (Index j = 0; j < points; ++j) coord[static_cast<size_t>(j)] = x[j * dim + c];
    const std::vector<double> zc = detail::chain_projection_oracle_1d(coord, 1.0);
    for (Index j = 0; j < points; ++j) inst.truth.z_star[j * dim + c] = zc[static_cast<size_t>(j)];
  }
  inst.truth.data = x;
  inst.truth.note = "per-coordinate dynamic-programming chain projection";
  return inst;
}

/// Multiperiod portfolio rebalancing with turnover costs. Variables are
/// x = (w_1..w_H, u_1..u_H) with N assets and H periods (n = 2 N H).
/// P = blkdiag(risk_aversion * Sigma_k over periods; ridge * I on the u
/// block): the turnover variables enter the objective only through the
/// 1e-8 ridge added so P stays strictly positive definite (flagged in the
/// instance note). Sigma_k = L_k L_k^T + 1e-6 I with 3-factor loadings
/// L_k ~ N(0, (0.01/sqrt(3))^2); q = (-rhat, 0) with
/// rhat_k ~ N(0.0005, 0.01^2). Equalities (H rows): ones^T w_k = 1.
/// Inequalities (4 N H + H rows, in order): long-only -w <= 0 (N H), slack
/// nonnegativity -u <= 0 (N H), turnover linearization pairs
/// w_k - w_{k-1} - u_k <= 0 and -(w_k - w_{k-1}) - u_k <= 0 interleaved per
/// (k, i) with w_0 the equal-weight start (N H pairs), and budgets
/// ones^T u_k <= turnover (H rows). Draw order per period k: L_k (N x 3,
/// row major) then rhat_k.
inline BenchInstance gen_portfolio_qp(Index horizon, Index assets, double risk_aversion,
                                      double turnover, std::uint64_t seed) {
  if (horizon < 1 || assets < 2) {
    throw InvalidProblem("gen_portfolio_qp: need horizon >= 1 and assets >= 2");
  }
  if (!(risk_aversion > 0.0) || !(turnover > 0.0)) {
    throw InvalidProblem("gen_portfolio_qp: risk_aversion and turnover must be positive");
  }
  const Index periods = horizon;
  const Index nh = assets * periods;
  const Index n = 2 * nh;
  NormalSampler rng(seed);

  std::vector<Eigen::Triplet<double>> pt, at, ct;
  Vector q = Vector::Zero(n);
  const double lscale = 0.01 / std::sqrt(3.0);
  for (Index k = 0; k < periods; ++k) {
    Matrix loadings(assets, 3);
    rng.fill_normal(loadings);
    loadings *= lscale;
    Vector rhat(assets);
    rng.fill_normal(rhat);
    rhat = 0.0005 + 0.01 * rhat.array();

    Matrix sigma = loadings * loadings.transpose();
    sigma.diagonal().array() += 1e-6;
    const Index off = k * assets;
    for (Index i = 0; i < assets; ++i) {
      for (Index j = 0; j < assets; ++j) {
        pt.emplace_back(static_cast<int>(off + i), static_cast<int>(off + j),
                        risk_aversion * sigma(i, j));
      }
      q[off + i] = -rhat[i];
    }
  }
  for (Index i = 0; i < nh; ++i) {
    pt.emplace_back(static_cast<int>(nh + i), static_cast<int>(nh + i), 1e-8);
  }

  for (Index k = 0; k < periods; ++k) {
    for (Index i = 0; i < assets; ++i) {
      at.emplace_back(static_cast<int>(k), static_cast<int>(k * assets + i), 1.0);
    }
  }

  const Index m = 4 * nh + periods;
  for (Index i = 0; i < nh; ++i) ct.emplace_back(static_cast<int>(i), static_cast<int>(i), -1.0);
  for (Index i = 0; i < nh; ++i) {
    ct.emplace_back(static_cast<int>(nh + i), static_cast<int>(nh + i), -1.0);
  }
  Vector d = Vector::Zero(m);
  const double w0 = 1.0 / static_cast<double>(assets);
  for (Index k = 0; k < periods; ++k) {
    for (Index i = 0; i < assets; ++i) {
      const Index pair = k * assets + i;
      const int rp = static_cast<int>(2 * nh + 2 * pair);
      const int wk = static_cast<int>(k * assets + i);
      const int uk = static_cast<int>(nh + k * assets + i);
      ct.emplace_back(rp, wk, 1.0);
      ct.emplace_back(rp, uk, -1.0);
      ct.emplace_back(rp + 1, wk, -1.0);
      ct.emplace_back(rp + 1, uk, -1.0);
      if (k > 0) {
        const int wprev = static_cast<int>((k - 1) * assets + i);
        ct.emplace_back(rp, wprev, -1.0);
        ct.emplace_back(rp + 1, wprev, 1.0);
      } else {
        d[rp] = w0;
        d[rp + 1] = -w0;
      }
    }
  }
  for (Index k = 0; k < periods; ++k) {
    for (Index i = 0; i < assets; ++i) {
      ct.emplace_back(static_cast<int>(4 * nh + k), static_cast<int>(nh + k * assets + i), 1.0);
    }
    d[4 * nh + k] = turnover;
  }

  SparseMatrixRm ps(n, n), as(periods, n), cs(m, n);
  ps.setFromTriplets(pt.begin(), pt.end());
  as.setFromTriplets(at.begin(), at.end());
  cs.setFromTriplets(ct.begin(), ct.end());

  BenchInstance inst;
  inst.problem = build_problem(ps, q, as, Vector(Vector::Ones(periods)), cs, d);
  inst.family = "portfolio";
  inst.size_desc = {horizon, assets};
  inst.seed = seed;
  inst.truth.note =
      "no closed form; 1e-8 ridge added to the u block for strict convexity";
  return inst;
}

}  // namespace diffqp
