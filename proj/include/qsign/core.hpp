#pragma once

// Data types for linear models and linear hypotheses, plus the dense
// linear algebra tied to the hypothesis geometry: rank checks, kernel
// bases of A, row-space coefficient solves and minimum-norm feasible points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "qsign/error.hpp"

namespace qsign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace detail {

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.array().isFinite().all();
}

/// Numerical rank with the cutoff max(rows, cols) * eps * sigma_max.
inline Index numerical_rank(const Eigen::Ref<const Matrix>& m) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double cutoff = static_cast<double>(std::max(m.rows(), m.cols())) *
                        std::numeric_limits<double>::epsilon() * sv(0);
  return (sv.array() > cutoff).count();
}

inline std::string shape(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

/// Response y (length n) and design X (n x p).
class RegressionProblem {
 public:
  RegressionProblem(Vector y, Matrix X) : y_(std::move(y)), X_(std::move(X)) {
    if (y_.size() < 1 || X_.cols() < 1)
      throw DimensionError("regression problem needs n >= 1 and p >= 1");
    if (X_.rows() != y_.size())
      throw DimensionError("design is " + detail::shape(X_.rows(), X_.cols()) +
                           " but response has length " + std::to_string(y_.size()));
    if (!detail::all_finite(y_) || !detail::all_finite(X_))
      throw InvalidArgument("regression problem has non-finite entries");
    if (detail::numerical_rank(X_) != std::min(X_.rows(), X_.cols()))
      throw InvalidArgument("design matrix " + detail::shape(X_.rows(), X_.cols()) +
                            " is rank deficient");
  }

  const Vector& y() const noexcept { return y_; }
  const Matrix& X() const noexcept { return X_; }
  Index n() const noexcept { return X_.rows(); }
  Index p() const noexcept { return X_.cols(); }

  RegressionProblem with_response(Vector y) const {
    RegressionProblem copy = *this;
    if (y.size() != copy.y_.size()) throw DimensionError("response length changed");
    copy.y_ = std::move(y);
    return copy;
  }

 private:
  Vector y_;
  Matrix X_;
};

/// Null hypothesis A beta = b with A of full row rank m <= p.
class LinearHypothesis {
 public:
  LinearHypothesis(Matrix A, Vector b) : A_(std::move(A)), b_(std::move(b)) {
    if (A_.rows() < 1 || A_.rows() > A_.cols())
      throw DimensionError("hypothesis matrix is " + detail::shape(A_.rows(), A_.cols()) +
                           "; need 1 <= m <= p");
    if (b_.size() != A_.rows())
      throw DimensionError("hypothesis right-hand side has length " +
                           std::to_string(b_.size()) + ", expected " +
                           std::to_string(A_.rows()));
    if (!detail::all_finite(A_) || !detail::all_finite(b_))
      throw InvalidArgument("hypothesis has non-finite entries");
    if (detail::numerical_rank(A_) != A_.rows())
      throw HypothesisRankError("hypothesis matrix " + detail::shape(A_.rows(), A_.cols()) +
                                " is not of full row rank");
  }

  const Matrix& A() const noexcept { return A_; }
  const Vector& b() const noexcept { return b_; }
  Index m() const noexcept { return A_.rows(); }
  Index p() const noexcept { return A_.cols(); }

  /// Applies a diagonal row rescaling D to both A and b.
  LinearHypothesis rescaled(const Vector& d) const {
    if (d.size() != m()) throw DimensionError("rescaling vector has wrong length");
    return LinearHypothesis(d.asDiagonal() * A_, d.asDiagonal() * b_);
  }

  LinearHypothesis with_rhs(Vector b) const {
    return LinearHypothesis(A_, std::move(b));
  }

 private:
  Matrix A_;
  Vector b_;
};

/// A quantile level tau. Levels closer than 1e-4 to 0 or 1 are rejected
/// because the linear program degenerates there.
class QuantileLevel {
 public:
  static constexpr double kMinLevel = 1e-4;

  explicit QuantileLevel(double tau = 0.5) : tau_(tau) {
    if (!(tau > 0.0 && tau < 1.0))
      throw InvalidArgument("quantile level must lie in (0, 1), got " + std::to_string(tau));
    if (tau < kMinLevel || tau > 1.0 - kMinLevel)
      throw InvalidArgument("quantile level " + std::to_string(tau) +
                            " is too close to 0 or 1");
  }

  double value() const noexcept { return tau_; }
  operator double() const noexcept { return tau_; }
  bool is_median() const noexcept { return tau_ == 0.5; }

 private:
  double tau_;
};

/// Tilted absolute loss.
inline double rho(double tau, double r) noexcept {
  return r < 0.0 ? (tau - 1.0) * r : tau * r;
}

/// Cached factorizations of A. Construction costs one SVD and one QR of
/// A^T; afterwards every coefficient solve is a pair of triangular solves.
class HypothesisGeometry {
 public:
  explicit HypothesisGeometry(const LinearHypothesis& h)
      : A_(h.A()), b_(h.b()), qr_(h.A().transpose()) {
    Eigen::JacobiSVD<Matrix> svd(A_);
    const Vector& sv = svd.singularValues();
    const double cutoff = static_cast<double>(std::max(A_.rows(), A_.cols())) *
                          std::numeric_limits<double>::epsilon() * sv(0);
    if ((sv.array() > cutoff).count() != A_.rows())
      throw HypothesisRankError("hypothesis matrix is not of full row rank");
    // cond(A A^T) = cond(A)^2
    const double ratio = sv(0) / sv(sv.size() - 1);
    condition_ = ratio * ratio;
  }

  Index m() const noexcept { return A_.rows(); }
  Index p() const noexcept { return A_.cols(); }
  const Matrix& A() const noexcept { return A_; }
  const Vector& b() const noexcept { return b_; }

  /// Condition number of A A^T.
  double condition() const noexcept { return condition_; }
  bool ill_conditioned() const noexcept { return condition_ > 1e12; }

  /// (A A^T)^{-1} A v, i.e. the least-squares solution of A^T alpha = v.
  Vector coefficients(const Eigen::Ref<const Vector>& v) const {
    if (v.size() != p()) throw DimensionError("coefficient solve: vector has wrong length");
    return qr_.solve(v);
  }

  /// Orthonormal basis of ker(A), p x (p - m).
  Matrix kernel_basis() const {
    Matrix q = qr_.householderQ() * Matrix::Identity(p(), p());
    return q.rightCols(p() - m());
  }

  /// A^T (A A^T)^{-1} b.
  Vector min_norm_feasible() const {
    // A^T = Q R, so A A^T = R^T R and the solution is Q R^{-T} b.
    const Index m_ = m();
    Vector z = qr_.matrixQR().topLeftCorner(m_, m_).template triangularView<Eigen::Upper>()
                   .transpose().solve(b_);
    Vector full = Vector::Zero(p());
    full.head(m_) = z;
    return qr_.householderQ() * full;
  }

 private:
  Matrix A_;
  Vector b_;
  Eigen::HouseholderQR<Matrix> qr_;
  double condition_ = 1.0;
};

struct CoefficientSolve {
  Vector alpha;
  bool ill_conditioned = false;
};

inline Matrix kernel_basis(const LinearHypothesis& h) {
  return HypothesisGeometry(h).kernel_basis();
}

inline CoefficientSolve hypothesis_coefficients(const LinearHypothesis& h,
                                                const Eigen::Ref<const Vector>& v) {
  HypothesisGeometry g(h);
  return {g.coefficients(v), g.ill_conditioned()};
}

inline Vector min_norm_feasible(const LinearHypothesis& h) {
  return HypothesisGeometry(h).min_norm_feasible();
}

}  // namespace qsign
