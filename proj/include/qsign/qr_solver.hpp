#pragma once

// Quantile regression by linear programming.
//
// The LP  min sum_i w_i rho_{tau_i}(y_i - x_i^T beta)  is solved by a
// vertex-walking simplex: a vertex is a set B of q rows interpolated
// exactly, the dual is the weighted sign of the remaining residuals, and
// the basic duals solve X_B^T w_B = -X_N^T w_N. A basic dual outside
// [-w tau, w (1 - tau)] names the row to release; the step length comes
// from a weighted-median search over the residual breakpoints, so one
// pivot may cross several breakpoints at once.
//
// Ties in the data are broken by solving on a tiny deterministic
// perturbation of y and then re-checking optimality on the original y.
//
// Linear constraints A beta = b are eliminated by picking a well
// conditioned m-column block A1 of A, which leaves an unconstrained
// problem in the remaining p - m coefficients. The affine LASSO is
// solved by appending the rows (A, b) to (X, y) as extra loss rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qsign/core.hpp"
#include "qsign/random.hpp"

namespace qsign {

/// Per-row loss: row i contributes weight_i * rho_{tau_i}(r_i).
struct RowLosses {
  Vector tau;
  Vector weight;

  static RowLosses uniform(Index n, double tau) {
    return {Vector::Constant(n, tau), Vector::Ones(n)};
  }

  Index size() const noexcept { return tau.size(); }

  void validate(Index n) const {
    if (tau.size() != n || weight.size() != n)
      throw DimensionError("row losses have length " + std::to_string(tau.size()) +
                           ", expected " + std::to_string(n));
    for (Index i = 0; i < n; ++i) {
      if (!(tau(i) > 0.0 && tau(i) < 1.0))
        throw InvalidArgument("row quantile level outside (0, 1) at row " + std::to_string(i));
      if (!(weight(i) >= 0.0) || !std::isfinite(weight(i)))
        throw InvalidArgument("row weight must be finite and nonnegative at row " +
                              std::to_string(i));
    }
  }

  double lower(Index i) const { return -weight(i) * tau(i); }
  double upper(Index i) const { return weight(i) * (1.0 - tau(i)); }

  /// Dual value forced by the sign of a nonzero residual.
  double sign_dual(Index i, double r) const { return r < 0.0 ? upper(i) : lower(i); }

  double objective(const Eigen::Ref<const Vector>& r) const {
    double total = 0.0;
    for (Index i = 0; i < r.size(); ++i) total += weight(i) * rho(tau(i), r(i));
    return total;
  }
};

enum class FitStatus { converged, degenerate_dual, max_iterations };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::degenerate_dual: return "degenerate-dual";
    case FitStatus::max_iterations: return "max-iterations";
  }
  return "unknown";
}

struct QuantileFit {
  Vector beta;
  Vector residuals;  // y - X beta, one per loss row
  Vector dual;       // omega, in [-w tau, w (1 - tau)] per row
  double objective = 0.0;
  std::vector<Index> zero_set;
  std::vector<Index> basis;  // rows interpolated at the vertex
  Index free_coefficients = 0;
  int iterations = 0;
  FitStatus status = FitStatus::converged;
  bool underdetermined = false;  // n < p: zero objective attainable
  RowLosses losses;

  bool ok() const noexcept { return status != FitStatus::max_iterations; }
};

struct SolverOptions {
  int max_iterations = 0;              // 0: 50 (n + q) + 100
  double zero_tolerance = 1e-9;        // |r| <= tol (1 + |y|_inf) counts as zero
  double perturbation = 1e-12;         // relative size of the tie-breaking jitter
  double optimality_tolerance = 1e-9;  // relative to the largest row weight
};

/// Dual recovered from a vertex fit.
struct DualRecovery {
  Vector omega;
  bool degenerate = false;
  double max_clip = 0.0;
};

/// Sign rule off the zero set; on the zero set Z solves
/// X_Z^T w_Z = -X_N^T w_N (least squares when |Z| != q), then clips to
/// the dual box.
inline DualRecovery recover_dual(const Eigen::Ref<const Vector>& residuals,
                                 const Eigen::Ref<const Matrix>& X_reduced,
                                 const RowLosses& losses, const std::vector<Index>& zero_set) {
  const Index n = residuals.size();
  if (X_reduced.rows() != n) throw DimensionError("recover_dual: design/residual mismatch");
  losses.validate(n);
  DualRecovery out;
  out.omega = Vector::Zero(n);
  std::vector<char> in_zero(static_cast<std::size_t>(n), 0);
  for (Index i : zero_set) in_zero[static_cast<std::size_t>(i)] = 1;
  for (Index i = 0; i < n; ++i)
    if (!in_zero[static_cast<std::size_t>(i)]) out.omega(i) = losses.sign_dual(i, residuals(i));
  const Index q = X_reduced.cols();
  const Index z = static_cast<Index>(zero_set.size());
  if (z == 0) {
    out.degenerate = q > 0 && (X_reduced.transpose() * out.omega).lpNorm<Eigen::Infinity>() > 1e-6;
    return out;
  }
  if (q == 0) {
    // no orthogonality condition: any value in the box is dual feasible
    for (Index i : zero_set) out.omega(i) = std::clamp(0.0, losses.lower(i), losses.upper(i));
    out.degenerate = true;
    return out;
  }
  Vector rhs = -(X_reduced.transpose() * out.omega);
  Matrix XZt(q, z);
  for (Index j = 0; j < z; ++j) XZt.col(j) = X_reduced.row(zero_set[static_cast<std::size_t>(j)]).transpose();
  Vector wz;
  if (z == q) {
    Eigen::PartialPivLU<Matrix> lu(XZt);
    wz = lu.solve(rhs);
  } else {
    out.degenerate = true;
    wz = Eigen::CompleteOrthogonalDecomposition<Matrix>(XZt).solve(rhs);
  }
  for (Index j = 0; j < z; ++j) {
    const Index i = zero_set[static_cast<std::size_t>(j)];
    const double lo = losses.lower(i);
    const double hi = losses.upper(i);
    const double v = wz(j);
    const double clipped = std::clamp(v, lo, hi);
    if (!std::isfinite(v)) {
      out.degenerate = true;
      out.omega(i) = std::clamp(0.0, lo, hi);
      continue;
    }
    out.max_clip = std::max(out.max_clip, std::fabs(v - clipped));
    out.omega(i) = clipped;
  }
  if (out.max_clip > 1e-6) out.degenerate = true;
  return out;
}

inline DualRecovery recover_dual(const QuantileFit& fit, const Eigen::Ref<const Matrix>& X_reduced) {
  return recover_dual(fit.residuals, X_reduced, fit.losses, fit.zero_set);
}

/// Zero duality gap, dual box and orthogonality residuals of a fit.
struct Certificate {
  double duality_gap = 0.0;      // |objective + omega^T r|
  double box_violation = 0.0;    // max distance of omega outside its box
  double orthogonality = 0.0;    // |X_reduced^T omega|_inf
};

inline Certificate certify(const QuantileFit& fit, const Eigen::Ref<const Matrix>& X_reduced) {
  Certificate c;
  c.duality_gap = std::fabs(fit.objective + fit.dual.dot(fit.residuals));
  for (Index i = 0; i < fit.dual.size(); ++i) {
    const double lo = fit.losses.lower(i);
    const double hi = fit.losses.upper(i);
    c.box_violation = std::max({c.box_violation, lo - fit.dual(i), fit.dual(i) - hi});
  }
  if (X_reduced.cols() > 0)
    c.orthogonality = (X_reduced.transpose() * fit.dual).lpNorm<Eigen::Infinity>();
  return c;
}

namespace detail {

struct VertexResult {
  std::vector<Index> basis;
  Vector beta;
  Vector dual;
  bool optimal = false;
  int iterations = 0;
};

class VertexSimplex {
 public:
  VertexSimplex(const Matrix& X, const RowLosses& losses, double tol)
      : X_(X), losses_(losses), tol_(tol) {}

  VertexResult run(const Vector& y, std::vector<Index> basis, int max_iter) const {
    const Index n = X_.rows();
    const Index q = X_.cols();
    VertexResult out;
    std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
    for (Index i : basis) in_basis[static_cast<std::size_t>(i)] = 1;

    Vector r(n), omega(n), g(n);
    Matrix XB(q, q);
    std::vector<std::pair<double, Index>> breaks;
    breaks.reserve(static_cast<std::size_t>(n));

    for (int iter = 0;; ++iter) {
      Eigen::PartialPivLU<Matrix> lu;
      Vector beta = Vector::Zero(q);
      if (q > 0) {
        Vector yB(q);
        for (Index j = 0; j < q; ++j) {
          XB.row(j) = X_.row(basis[static_cast<std::size_t>(j)]);
          yB(j) = y(basis[static_cast<std::size_t>(j)]);
        }
        lu.compute(XB);
        beta = lu.solve(yB);
      }
      r.noalias() = y - X_ * beta;
      for (Index j : basis) r(j) = 0.0;
      for (Index i = 0; i < n; ++i)
        omega(i) = in_basis[static_cast<std::size_t>(i)] ? 0.0 : losses_.sign_dual(i, r(i));

      Index leave = -1;
      double worst = tol_;
      int direction = 0;
      if (q > 0) {
        Vector wB = lu.transpose().solve(-(X_.transpose() * omega));
        for (Index j = 0; j < q; ++j) {
          const Index i = basis[static_cast<std::size_t>(j)];
          omega(i) = wB(j);
          const double up = wB(j) - losses_.upper(i);
          const double down = losses_.lower(i) - wB(j);
          if (up > worst) { worst = up; leave = j; direction = +1; }
          if (down > worst) { worst = down; leave = j; direction = -1; }
        }
      }
      out.iterations = iter;
      if (leave < 0) {
        out.basis = std::move(basis);
        out.beta = std::move(beta);
        out.dual = omega;
        out.optimal = true;
        return out;
      }
      if (iter >= max_iter) {
        out.basis = std::move(basis);
        out.beta = std::move(beta);
        out.dual = omega;
        out.optimal = false;
        return out;
      }

      // Move along the edge that frees the leaving row; every other basic
      // residual stays at zero.
      Vector unit = Vector::Zero(q);
      unit(leave) = static_cast<double>(direction);
      const Vector delta = lu.solve(unit);
      g.noalias() = X_ * delta;

      breaks.clear();
      for (Index i = 0; i < n; ++i) {
        if (in_basis[static_cast<std::size_t>(i)] || g(i) == 0.0) continue;
        const bool crossing = r(i) == 0.0 ? g(i) > 0.0 : (r(i) > 0.0) == (g(i) > 0.0);
        if (crossing) breaks.emplace_back(r(i) / g(i), i);
      }
      std::sort(breaks.begin(), breaks.end());
      double slope = -worst;
      Index enter = -1;
      for (const auto& [t, i] : breaks) {
        slope += losses_.weight(i) * std::fabs(g(i));
        if (slope >= 0.0) {
          enter = i;
          break;
        }
      }
      if (enter < 0) throw SolverError("quantile LP: descent direction without breakpoint");
      const Index old = basis[static_cast<std::size_t>(leave)];
      in_basis[static_cast<std::size_t>(old)] = 0;
      in_basis[static_cast<std::size_t>(enter)] = 1;
      basis[static_cast<std::size_t>(leave)] = enter;
    }
  }

 private:
  const Matrix& X_;
  const RowLosses& losses_;
  double tol_;
};

inline double jitter(Index i) {
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(i) + 0x7a11ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
}

}  // namespace detail

/// Unconstrained weighted quantile regression on a fixed design. The
/// design factorizations are computed once, so one solver can fit many
/// responses.
class QuantileSolver {
 public:
  explicit QuantileSolver(Matrix X, SolverOptions options = {})
      : X_(std::move(X)), options_(options) {
    const Index p = X_.cols();
    if (p > 0 && X_.rows() > 0) {
      Eigen::ColPivHouseholderQR<Matrix> qr(X_);
      const Index rank = qr.rank();
      for (Index j = 0; j < rank; ++j) columns_.push_back(qr.colsPermutation().indices()(j));
      std::sort(columns_.begin(), columns_.end());
    }
    Xs_.resize(X_.rows(), static_cast<Index>(columns_.size()));
    for (std::size_t j = 0; j < columns_.size(); ++j)
      Xs_.col(static_cast<Index>(j)) = X_.col(columns_[j]);
    if (Xs_.cols() > 0) ls_.compute(Xs_);
  }

  const Matrix& design() const noexcept { return X_; }
  Index rank() const noexcept { return Xs_.cols(); }

  QuantileFit fit(const Vector& y, const RowLosses& losses) const {
    const Index n = X_.rows();
    if (y.size() != n) throw DimensionError("response length does not match design");
    losses.validate(n);
    const Index q = Xs_.cols();
    const double ynorm = y.size() ? y.lpNorm<Eigen::Infinity>() : 0.0;
    const double wmax = losses.weight.size() ? losses.weight.maxCoeff() : 1.0;
    const double tol = options_.optimality_tolerance * std::max(wmax, 1e-300);
    const int max_iter = options_.max_iterations > 0
                             ? options_.max_iterations
                             : static_cast<int>(50 * (n + q) + 100);

    detail::VertexSimplex simplex(Xs_, losses, tol);
    const double eps = options_.perturbation * (ynorm > 0.0 ? ynorm : 1.0);
    Vector yp(n);
    for (Index i = 0; i < n; ++i) yp(i) = y(i) + eps * detail::jitter(i);

    detail::VertexResult res = simplex.run(yp, initial_basis(yp), max_iter);
    int iterations = res.iterations;
    bool optimal = res.optimal;
    if (optimal) {
      // The perturbed optimum is a vertex of the original problem; confirm
      // it there, allowing a few cleanup pivots.
      detail::VertexResult polish = simplex.run(y, res.basis, static_cast<int>(q) + 10);
      iterations += polish.iterations;
      if (polish.optimal) {
        res = std::move(polish);
      } else if (q > 0) {
        res.beta = solve_basis(res.basis, y);
      }
    }

    QuantileFit fit;
    fit.losses = losses;
    fit.iterations = iterations;
    fit.free_coefficients = q;
    fit.underdetermined = X_.cols() > n;
    fit.basis = res.basis;
    fit.beta = Vector::Zero(X_.cols());
    for (std::size_t j = 0; j < columns_.size(); ++j) fit.beta(columns_[j]) = res.beta(static_cast<Index>(j));
    fit.residuals = y - X_ * fit.beta;
    for (Index i : res.basis) fit.residuals(i) = 0.0;
    fit.objective = losses.objective(fit.residuals);
    const double ztol = options_.zero_tolerance * (1.0 + ynorm);
    for (Index i = 0; i < n; ++i)
      if (std::fabs(fit.residuals(i)) <= ztol) fit.zero_set.push_back(i);

    if (!optimal) {
      fit.dual = res.dual;
      fit.status = FitStatus::max_iterations;
      return fit;
    }
    DualRecovery rec = recover_dual(fit.residuals, Xs_, losses, fit.zero_set);
    if (rec.degenerate && q == 0) {
      fit.dual = std::move(rec.omega);
      fit.status = FitStatus::degenerate_dual;
    } else if (rec.degenerate) {
      // vertex certificate from the simplex, clipped to the box
      fit.dual = res.dual;
      for (Index i = 0; i < n; ++i)
        fit.dual(i) = std::clamp(fit.dual(i), losses.lower(i), losses.upper(i));
      fit.status = FitStatus::degenerate_dual;
    } else {
      fit.dual = std::move(rec.omega);
      fit.status = FitStatus::converged;
    }
    return fit;
  }

 private:
  Vector solve_basis(const std::vector<Index>& basis, const Vector& y) const {
    const Index q = Xs_.cols();
    Matrix XB(q, q);
    Vector yB(q);
    for (Index j = 0; j < q; ++j) {
      XB.row(j) = Xs_.row(basis[static_cast<std::size_t>(j)]);
      yB(j) = y(basis[static_cast<std::size_t>(j)]);
    }
    return Eigen::PartialPivLU<Matrix>(XB).solve(yB);
  }

  // Rows ordered by their least-squares residual, kept greedily while they
  // add a new direction.
  std::vector<Index> initial_basis(const Vector& y) const {
    const Index n = Xs_.rows();
    const Index q = Xs_.cols();
    std::vector<Index> basis;
    if (q == 0) return basis;
    const Vector beta = ls_.solve(y);
    const Vector r = (y - Xs_ * beta).cwiseAbs();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return r(a) < r(b); });
    Matrix Q(q, q);
    Index k = 0;
    for (Index i : order) {
      Vector v = Xs_.row(i).transpose();
      const double norm0 = v.norm();
      if (norm0 == 0.0) continue;
      for (int pass = 0; pass < 2; ++pass)
        for (Index j = 0; j < k; ++j) v -= Q.col(j).dot(v) * Q.col(j);
      const double norm = v.norm();
      if (norm > 1e-8 * norm0) {
        Q.col(k) = v / norm;
        basis.push_back(i);
        if (++k == q) return basis;
      }
    }
    // Fall back to a pivoted QR of X^T when the greedy pass stalls.
    Eigen::ColPivHouseholderQR<Matrix> qr(Xs_.transpose());
    basis.clear();
    for (Index j = 0; j < q; ++j) basis.push_back(qr.colsPermutation().indices()(j));
    return basis;
  }

  Matrix X_;
  Matrix Xs_;
  std::vector<Index> columns_;
  Eigen::HouseholderQR<Matrix> ls_;
  SolverOptions options_;
};

/// Least-rho_tau fit, optionally with per-row loss overrides.
inline QuantileFit fit_quantile(const RegressionProblem& problem, QuantileLevel tau,
                                const std::optional<RowLosses>& row_losses = std::nullopt,
                                const SolverOptions& options = {}) {
  QuantileSolver solver(problem.X(), options);
  return solver.fit(problem.y(), row_losses ? *row_losses : RowLosses::uniform(problem.n(), tau));
}

/// Elimination of A beta = b: beta_1 = A1^{-1} (b - A2 beta_2), where A1 is
/// the best conditioned m-column block chosen by column pivoting.
class ConstraintReduction {
 public:
  ConstraintReduction(const Matrix& X, const LinearHypothesis& h) {
    const Index p = h.p();
    const Index m = h.m();
    if (X.cols() != p)
      throw DimensionError("hypothesis has " + std::to_string(p) + " columns, design has " +
                           std::to_string(X.cols()));
    Eigen::ColPivHouseholderQR<Matrix> qr(h.A());
    const auto& perm = qr.colsPermutation().indices();
    std::vector<char> pinned(static_cast<std::size_t>(p), 0);
    for (Index j = 0; j < m; ++j) {
      pinned_.push_back(perm(j));
      pinned[static_cast<std::size_t>(perm(j))] = 1;
    }
    for (Index j = 0; j < p; ++j)
      if (!pinned[static_cast<std::size_t>(j)]) free_.push_back(j);

    Matrix A1(m, m), A2(m, p - m), X1(X.rows(), m), X2(X.rows(), p - m);
    for (Index j = 0; j < m; ++j) {
      A1.col(j) = h.A().col(pinned_[static_cast<std::size_t>(j)]);
      X1.col(j) = X.col(pinned_[static_cast<std::size_t>(j)]);
    }
    for (Index j = 0; j < p - m; ++j) {
      A2.col(j) = h.A().col(free_[static_cast<std::size_t>(j)]);
      X2.col(j) = X.col(free_[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Matrix> lu(A1);
    if (!lu.isInvertible() || lu.rcond() < 1e3 * std::numeric_limits<double>::epsilon())
      throw HypothesisRankError("no nonsingular m-column block in the hypothesis matrix");
    pinned_from_free_ = lu.solve(A2);
    pinned_offset_ = lu.solve(h.b());
    y_offset_ = X1 * pinned_offset_;
    X_reduced_ = X2 - X1 * pinned_from_free_;
    p_ = p;
  }

  const Matrix& X_reduced() const noexcept { return X_reduced_; }
  Vector y_reduced(const Vector& y) const { return y - y_offset_; }

  Vector full_beta(const Vector& beta_free) const {
    Vector beta(p_);
    const Vector pinned = pinned_offset_ - pinned_from_free_ * beta_free;
    for (std::size_t j = 0; j < pinned_.size(); ++j) beta(pinned_[j]) = pinned(static_cast<Index>(j));
    for (std::size_t j = 0; j < free_.size(); ++j) beta(free_[j]) = beta_free(static_cast<Index>(j));
    return beta;
  }

  Index free_count() const noexcept { return static_cast<Index>(free_.size()); }

 private:
  std::vector<Index> pinned_;
  std::vector<Index> free_;
  Matrix pinned_from_free_;  // A1^{-1} A2
  Vector pinned_offset_;     // A1^{-1} b
  Vector y_offset_;          // X1 A1^{-1} b
  Matrix X_reduced_;
  Index p_ = 0;
};

/// Constrained quantile regression on a fixed (X, A, b); reusable across
/// responses.
class ConstrainedSolver {
 public:
  ConstrainedSolver(const Matrix& X, const LinearHypothesis& h, SolverOptions options = {})
      : X_(X), reduction_(X, h), solver_(reduction_.X_reduced(), options) {}

  const Matrix& X_reduced() const noexcept { return reduction_.X_reduced(); }
  const ConstraintReduction& reduction() const noexcept { return reduction_; }

  QuantileFit fit(const Vector& y, double tau) const {
    if (y.size() != X_.rows()) throw DimensionError("response length does not match design");
    QuantileFit f = solver_.fit(reduction_.y_reduced(y), RowLosses::uniform(y.size(), tau));
    f.beta = reduction_.full_beta(f.beta);
    // residuals of the reduced problem equal those of the full one; keep
    // the basis rows at exactly zero
    Vector r = y - X_ * f.beta;
    for (Index i : f.basis) r(i) = 0.0;
    f.residuals = std::move(r);
    f.objective = f.losses.objective(f.residuals);
    return f;
  }

 private:
  Matrix X_;
  ConstraintReduction reduction_;
  QuantileSolver solver_;
};

inline QuantileFit fit_constrained(const RegressionProblem& problem, const LinearHypothesis& h,
                                   QuantileLevel tau, const SolverOptions& options = {}) {
  return ConstrainedSolver(problem.X(), h, options).fit(problem.y(), tau);
}

/// Multiplier that turns sum rho_tau into the loss whose zero-thresholding
/// value is the reported statistic: at the median the LAD loss sum |r| =
/// 2 sum rho_{1/2}(r) is used, elsewhere sum rho_tau.
inline double loss_multiplier(double tau) noexcept { return tau == 0.5 ? 2.0 : 1.0; }

/// Affine quantile LASSO:
///   min_beta  c(tau) sum rho_tau(y - X beta) + lambda |A beta - b|_1,
/// with c(tau) from loss_multiplier. Solved as a plain quantile LP on the
/// stacked rows (X; A), (y; b), the appended rows carrying tau = 1/2 and
/// weight 2 lambda / c(tau). The returned fit covers all n + m rows.
inline QuantileFit fit_affine_lasso(const RegressionProblem& problem, const LinearHypothesis& h,
                                    QuantileLevel tau, double lambda,
                                    const SolverOptions& options = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("affine LASSO penalty must be finite and nonnegative");
  if (h.p() != problem.p()) throw DimensionError("hypothesis and design column counts differ");
  const Index n = problem.n();
  const Index m = h.m();
  Matrix X(n + m, problem.p());
  X << problem.X(), h.A();
  Vector y(n + m);
  y << problem.y(), h.b();
  RowLosses losses = RowLosses::uniform(n + m, tau);
  const double w = 2.0 * lambda / loss_multiplier(tau);
  for (Index k = 0; k < m; ++k) {
    losses.tau(n + k) = 0.5;
    losses.weight(n + k) = w;
  }
  return QuantileSolver(std::move(X), options).fit(y, losses);
}

}  // namespace qsign
