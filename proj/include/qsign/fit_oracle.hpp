#pragma once

// Brute-force quantile regression for tiny problems: every vertex of the
// LP interpolates p rows, so enumerating all p-row subsets and keeping the
// best interpolant gives the global optimum. Only meant for verification.

#include <limits>
#include <vector>

#include "qsign/core.hpp"
#include "qsign/qr_solver.hpp"

namespace qsign {

inline QuantileFit fit_oracle(const RegressionProblem& problem, QuantileLevel tau) {
  const Index n = problem.n();
  const Index p = problem.p();
  if (n > 12 || p > 3) throw InvalidArgument("fit_oracle is limited to n <= 12 and p <= 3");
  if (n < p) throw InvalidArgument("fit_oracle needs n >= p");
  const Matrix& X = problem.X();
  const Vector& y = problem.y();
  const RowLosses losses = RowLosses::uniform(n, tau);

  QuantileFit best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<Index> subset(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) subset[static_cast<std::size_t>(j)] = j;
  for (;;) {
    Matrix XS(p, p);
    Vector yS(p);
    for (Index j = 0; j < p; ++j) {
      XS.row(j) = X.row(subset[static_cast<std::size_t>(j)]);
      yS(j) = y(subset[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Matrix> lu(XS);
    if (lu.isInvertible() && lu.rcond() > 1e-12) {
      Vector beta = lu.solve(yS);
      Vector r = y - X * beta;
      const double obj = losses.objective(r);
      if (obj < best.objective) {
        best.objective = obj;
        best.beta = std::move(beta);
        best.residuals = std::move(r);
        best.basis = subset;
      }
    }
    // next combination in lexicographic order
    Index k = p - 1;
    while (k >= 0 && subset[static_cast<std::size_t>(k)] == n - p + k) --k;
    if (k < 0) break;
    ++subset[static_cast<std::size_t>(k)];
    for (Index j = k + 1; j < p; ++j)
      subset[static_cast<std::size_t>(j)] = subset[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (!std::isfinite(best.objective)) throw OracleDegenerateError("every row subset is singular");
  best.losses = losses;
  best.free_coefficients = p;
  best.dual = Vector::Zero(n);
  return best;
}

}  // namespace qsign
