#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "qsign/core.hpp"
#include "qsign/qr_solver.hpp"
#include "qsign/special.hpp"
#include "qsign/stest.hpp"

namespace qsign {

/// A regression problem together with the null hypothesis to test on it.
struct Design {
  RegressionProblem problem;
  LinearHypothesis hypothesis;
  std::vector<std::string> warnings;
};

struct PairedData {
  Vector u;
  Vector v;

  void validate() const {
    if (u.size() != v.size())
      throw DimensionError("paired samples differ in length (" + std::to_string(u.size()) + " vs " +
                           std::to_string(v.size()) + ")");
    if (u.size() == 0) throw DimensionError("paired samples are empty");
    if (!detail::all_finite(u) || !detail::all_finite(v))
      throw InvalidArgument("paired samples contain non-finite values");
  }
};

/// y = v - u on an intercept; H0: intercept = 0.
inline Design paired_design(const PairedData& data) {
  data.validate();
  const Index n = data.u.size();
  return {RegressionProblem(data.v - data.u, Matrix::Ones(n, 1)),
          LinearHypothesis(Matrix::Ones(1, 1), Vector::Zero(1)), {}};
}

/// y = (u, v), X = [1 0; 1 1] in blocks, H0: shift = 0. Sample sizes may
/// differ.
inline Design unpaired_design(const Vector& u, const Vector& v) {
  if (u.size() == 0 || v.size() == 0) throw DimensionError("both samples must be nonempty");
  const Index nu = u.size();
  const Index nv = v.size();
  Matrix X = Matrix::Zero(nu + nv, 2);
  X.col(0).setOnes();
  X.col(1).tail(nv).setOnes();
  Vector y(nu + nv);
  y << u, v;
  Matrix A(1, 2);
  A << 0.0, 1.0;
  return {RegressionProblem(std::move(y), std::move(X)), LinearHypothesis(A, Vector::Zero(1)), {}};
}

struct TimeSeriesProblem {
  Vector series;
  double tau = 0.5;
};

/// (n - 1) x n first-difference matrix, rows (-1, 1).
inline Matrix difference_matrix(Index rows, Index cols) {
  if (rows < 1 || rows >= cols) throw DimensionError("difference matrix needs 1 <= rows < cols");
  Matrix D = Matrix::Zero(rows, cols);
  for (Index k = 0; k < rows; ++k) {
    D(k, k) = -1.0;
    D(k, k + 1) = 1.0;
  }
  return D;
}

/// Total variation: X = I_n, H0: every first difference is zero.
inline Design tv_design(const TimeSeriesProblem& ts) {
  const Index n = ts.series.size();
  if (n < 3) throw DimensionError("total variation design needs at least 3 observations");
  (void)QuantileLevel(ts.tau);  // validates
  Design d{RegressionProblem(ts.series, Matrix::Identity(n, n)),
           LinearHypothesis(difference_matrix(n - 1, n), Vector::Zero(n - 1)),
           {}};
  if (n < 30)
    d.warnings.push_back("total variation design with n = " + std::to_string(n) +
                         " < 30; extreme quantile levels leave few observations per tail");
  return d;
}

// ---------------------------------------------------------------------------
// Affine LASSO path

struct LassoPathRow {
  double lambda = 0.0;
  double penalty_norm = 0.0;  // |A beta - b|_1
  Vector beta;
  bool marker = false;
};

/// ascending grid of `steps` points on [0, upper]
inline std::vector<double> lambda_grid(double upper, int steps) {
  if (steps < 2) throw InvalidArgument("lambda grid needs at least 2 points");
  if (!(upper > 0.0) || !std::isfinite(upper)) throw InvalidArgument("lambda grid upper end must be positive");
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) g[static_cast<std::size_t>(k)] = upper * k / (steps - 1);
  return g;
}

/// Fits the affine LASSO at every grid point. When `marker` is given, that
/// lambda is inserted into the grid (once) and its row flagged.
inline std::vector<LassoPathRow> lasso_path(const RegressionProblem& problem,
                                            const LinearHypothesis& h, QuantileLevel tau,
                                            std::vector<double> grid,
                                            std::optional<double> marker = std::nullopt,
                                            const SolverOptions& options = {}) {
  if (grid.empty() && !marker) throw InvalidArgument("lambda grid is empty");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] >= 0.0) || !std::isfinite(grid[k]))
      throw InvalidArgument("lambda grid values must be finite and nonnegative");
    if (k > 0 && grid[k] < grid[k - 1]) throw InvalidArgument("lambda grid must be ascending");
  }
  if (marker) {
    if (!(*marker >= 0.0)) throw InvalidArgument("marker lambda must be nonnegative");
    grid.erase(std::remove(grid.begin(), grid.end(), *marker), grid.end());
    grid.insert(std::upper_bound(grid.begin(), grid.end(), *marker), *marker);
  }
  std::vector<LassoPathRow> rows;
  rows.reserve(grid.size());
  for (double lambda : grid) {
    const QuantileFit fit = fit_affine_lasso(problem, h, tau, lambda, options);
    if (!fit.ok()) throw SolverError("affine LASSO fit hit the iteration limit");
    LassoPathRow row;
    row.lambda = lambda;
    row.beta = fit.beta;
    row.penalty_norm = (h.A() * fit.beta - h.b()).cwiseAbs().sum();
    row.marker = marker && lambda == *marker;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Classical reference tests

struct FTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Index df1 = 0;
  Index df2 = 0;
};

/// Least-squares F test of A beta = b.
inline FTestResult f_test(const RegressionProblem& problem, const LinearHypothesis& h) {
  const Index n = problem.n();
  const Index p = problem.p();
  const Index m = h.m();
  if (h.p() != p) throw DimensionError("hypothesis and design column counts differ");
  if (n <= p) throw InvalidArgument("F test needs more observations than coefficients");
  Eigen::ColPivHouseholderQR<Matrix> qr(problem.X());
  if (qr.rank() < p) throw NumericalError("design is rank deficient; X^T X is singular");
  const Vector beta = qr.solve(problem.y());
  const double rss = (problem.y() - problem.X() * beta).squaredNorm();
  // (X^T X)^{-1} = P R^{-1} R^{-T} P^T, so A (X^T X)^{-1} A^T = B B^T with
  // B = A P R^{-1}
  const auto R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  const Matrix AP = h.A() * qr.colsPermutation();
  const Matrix B = R.transpose().solve(AP.transpose()).transpose();
  const Vector diff = h.A() * beta - h.b();
  const Eigen::LLT<Matrix> llt(B * B.transpose());
  const double quad = diff.dot(llt.solve(diff));
  FTestResult res;
  res.df1 = m;
  res.df2 = n - p;
  const double sigma2 = rss / static_cast<double>(n - p);
  if (sigma2 <= 0.0) {
    res.statistic = quad > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    res.p_value = quad > 0.0 ? 0.0 : 1.0;
    return res;
  }
  res.statistic = quad / static_cast<double>(m) / sigma2;
  res.p_value = special::f_upper_tail(res.statistic, static_cast<double>(m), static_cast<double>(n - p));
  return res;
}

/// P(B >= k), B ~ Binomial(n, 1/2).
inline double binomial_half_upper(Index n, Index k) {
  if (k <= 0) return 1.0;
  if (k > n) return 0.0;
  return special::incomplete_beta(static_cast<double>(k), static_cast<double>(n - k + 1), 0.5);
}

struct SignTestResult {
  Index statistic = 0;  // #{v_i > u_i}
  Index n = 0;          // untied pairs
  Index ties = 0;
  double p_value = 1.0;
};

/// Classical sign test; tied pairs are dropped. Exact two-sided p-value
/// 2 min(P(B <= s), P(B >= s)), capped at 1.
inline SignTestResult classic_sign_test(const PairedData& data) {
  data.validate();
  SignTestResult r;
  for (Index i = 0; i < data.u.size(); ++i) {
    if (data.v(i) > data.u(i)) ++r.statistic;
    else if (data.v(i) == data.u(i)) ++r.ties;
  }
  r.n = data.u.size() - r.ties;
  if (r.n == 0) throw InvalidArgument("sign test undefined: every pair is tied");
  const double upper = binomial_half_upper(r.n, r.statistic);
  const double lower = binomial_half_upper(r.n, r.n - r.statistic);  // P(B <= s) by symmetry
  r.p_value = std::min(1.0, 2.0 * std::min(upper, lower));
  return r;
}

struct MedianTestResult {
  Index statistic = 0;  // |#{v > m} - #{v < m}|
  Index above = 0;      // v above the pooled median
  Index below = 0;
  double median = 0.0;
  double p_value = 1.0;
};

/// Median test against the pooled median (midpoint of the two middle order
/// statistics for an even pool). Exact p-value from the hypergeometric law
/// of the v count above the median given the pooled margins; observations
/// equal to the median are dropped.
inline MedianTestResult median_test(const Vector& u, const Vector& v) {
  if (u.size() == 0 || v.size() == 0) throw DimensionError("both samples must be nonempty");
  std::vector<double> pool(u.begin(), u.end());
  pool.insert(pool.end(), v.begin(), v.end());
  std::sort(pool.begin(), pool.end());
  const std::size_t N = pool.size();
  MedianTestResult r;
  r.median = N % 2 ? pool[N / 2] : 0.5 * (pool[N / 2 - 1] + pool[N / 2]);
  Index pool_above = 0, pool_below = 0;
  for (double x : pool) {
    pool_above += x > r.median;
    pool_below += x < r.median;
  }
  for (double x : v) {
    r.above += x > r.median;
    r.below += x < r.median;
  }
  r.statistic = std::abs(r.above - r.below);
  const Index total = pool_above + pool_below;
  const Index draws = r.above + r.below;
  if (draws == 0) throw InvalidArgument("median test undefined: every v equals the pooled median");
  auto log_choose = [](Index a, Index b) {
    return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0);
  };
  const double log_denom = log_choose(total, draws);
  double p = 0.0;
  for (Index a = std::max<Index>(0, draws - pool_below); a <= std::min(draws, pool_above); ++a) {
    if (std::abs(2 * a - draws) < r.statistic) continue;
    p += std::exp(log_choose(pool_above, a) + log_choose(pool_below, draws - a) - log_denom);
  }
  r.p_value = std::min(1.0, p);
  return r;
}

}  // namespace qsign
