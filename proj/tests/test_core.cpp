#include <catch2/catch_amalgamated.hpp>

#include "qsign/core.hpp"
#include "test_support.hpp"

using namespace qsign;
using Catch::Approx;

TEST_CASE("kernel basis of an axis-aligned constraint", "[core]") {
  LinearHypothesis h(Matrix{{1.0, 0.0}}, Vector::Zero(1));
  const Matrix K = kernel_basis(h);
  REQUIRE(K.rows() == 2);
  REQUIRE(K.cols() == 1);
  CHECK(std::fabs(K(0, 0)) < 1e-14);
  CHECK(std::fabs(K(1, 0)) == Approx(1.0));
}

TEST_CASE("kernel basis of a full-rank constraint is empty", "[core]") {
  LinearHypothesis h(Matrix::Identity(3, 3), Vector::Zero(3));
  const Matrix K = kernel_basis(h);
  CHECK(K.rows() == 3);
  CHECK(K.cols() == 0);
}

TEST_CASE("kernel basis of beta1 + beta2 = 0", "[core]") {
  LinearHypothesis h(Matrix{{1.0, 1.0}}, Vector::Zero(1));
  const Matrix K = kernel_basis(h);
  REQUIRE(K.cols() == 1);
  // analytic null space (1, -1)/sqrt(2), up to sign
  const Vector expected = Vector{{1.0, -1.0}} / std::sqrt(2.0);
  CHECK(std::fabs(std::fabs(K.col(0).dot(expected)) - 1.0) < 1e-14);
  CHECK((h.A() * K).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("kernel bases are orthonormal and annihilated by A", "[core][property]") {
  RandomStream rs{11};
  for (int trial = 0; trial < 50; ++trial) {
    const Index p = testing::uniform_int(rs, 1, 12);
    const Index m = testing::uniform_int(rs, 1, p);
    LinearHypothesis h(testing::gaussian_matrix(rs, m, p), testing::gaussian_vector(rs, m));
    const Matrix K = kernel_basis(h);
    REQUIRE(K.cols() == p - m);
    if (K.cols() == 0) continue;
    const double amax = h.A().cwiseAbs().maxCoeff();
    CHECK((h.A() * K).cwiseAbs().maxCoeff() <= 1e-10 * amax);
    CHECK((K.transpose() * K - Matrix::Identity(p - m, p - m)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("hypothesis coefficients", "[core]") {
  SECTION("scalar case") {
    LinearHypothesis h(Matrix{{2.0, 0.0}}, Vector::Zero(1));
    const auto res = hypothesis_coefficients(h, Vector{{6.0, 5.0}});
    CHECK(res.alpha(0) == Approx(3.0).epsilon(1e-14));
    CHECK_FALSE(res.ill_conditioned);
  }
  SECTION("identity") {
    LinearHypothesis h(Matrix::Identity(4, 4), Vector::Zero(4));
    const Vector v{{1.5, -2.0, 0.25, 7.0}};
    CHECK((hypothesis_coefficients(h, v).alpha - v).cwiseAbs().maxCoeff() < 1e-14);
  }
  SECTION("matches the explicit normal equations") {
    RandomStream rs{3};
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix A = testing::gaussian_matrix(rs, 3, 5);
      const Vector v = testing::gaussian_vector(rs, 5);
      const Vector explicit_alpha = (A * A.transpose()).fullPivLu().solve(A * v);
      const Vector alpha = hypothesis_coefficients(LinearHypothesis(A, Vector::Zero(3)), v).alpha;
      CHECK((alpha - explicit_alpha).norm() <= 1e-10 * (1.0 + explicit_alpha.norm()));
    }
  }
  SECTION("flags ill conditioning") {
    Matrix A{{1.0, 0.0, 0.0}, {1.0, 1e-7, 0.0}};
    CHECK(hypothesis_coefficients(LinearHypothesis(A, Vector::Zero(2)), Vector::Ones(3)).ill_conditioned);
  }
}

TEST_CASE("hypothesis coefficients are linear", "[core][property]") {
  RandomStream rs{5};
  for (int trial = 0; trial < 50; ++trial) {
    const Index p = testing::uniform_int(rs, 2, 10);
    const Index m = testing::uniform_int(rs, 1, p);
    HypothesisGeometry g(LinearHypothesis(testing::gaussian_matrix(rs, m, p), Vector::Zero(m)));
    const Vector v1 = testing::gaussian_vector(rs, p);
    const Vector v2 = testing::gaussian_vector(rs, p);
    const double c = 3.0 * rs.normal();
    const Vector lhs = g.coefficients(v1 + c * v2);
    const Vector rhs = g.coefficients(v1) + c * g.coefficients(v2);
    CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + rhs.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("minimum-norm feasible point", "[core]") {
  SECTION("axis aligned") {
    const Vector b0 = min_norm_feasible(LinearHypothesis(Matrix{{1.0, 0.0}}, Vector{{2.0}}));
    CHECK(b0(0) == Approx(2.0));
    CHECK(std::fabs(b0(1)) < 1e-15);
  }
  SECTION("zero right-hand side") {
    RandomStream rs{8};
    const Vector b0 = min_norm_feasible(LinearHypothesis(testing::gaussian_matrix(rs, 2, 5), Vector::Zero(2)));
    CHECK(b0.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("residual and minimum norm on random instances") {
    RandomStream rs{9};
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix A = testing::gaussian_matrix(rs, 2, 4);
      const Vector b = 10.0 * testing::gaussian_vector(rs, 2);
      LinearHypothesis h(A, b);
      const Vector b0 = min_norm_feasible(h);
      CHECK((A * b0 - b).lpNorm<Eigen::Infinity>() <= 1e-10 * (1.0 + b.lpNorm<Eigen::Infinity>()));
      const Vector explicit_b0 = A.transpose() * (A * A.transpose()).ldlt().solve(b);
      CHECK((b0 - explicit_b0).norm() <= 1e-9 * (1.0 + explicit_b0.norm()));
    }
  }
}

TEST_CASE("input validation", "[core]") {
  CHECK_THROWS_AS(LinearHypothesis(Matrix{{1.0, 1.0}, {2.0, 2.0}}, Vector::Zero(2)), HypothesisRankError);
  CHECK_THROWS_AS(LinearHypothesis(Matrix::Ones(3, 2), Vector::Zero(3)), DimensionError);
  CHECK_THROWS_AS(LinearHypothesis(Matrix::Ones(1, 2), Vector::Zero(2)), DimensionError);
  CHECK_THROWS_AS(RegressionProblem(Vector::Ones(3), Matrix::Ones(2, 1)), DimensionError);
  CHECK_THROWS_AS(RegressionProblem(Vector{{1.0, NAN}}, Matrix::Ones(2, 1)), InvalidArgument);
  CHECK_THROWS_AS(RegressionProblem(Vector::Ones(3), Matrix::Ones(3, 2)), InvalidArgument);
  CHECK_THROWS_AS(QuantileLevel(0.0), InvalidArgument);
  CHECK_THROWS_AS(QuantileLevel(1.0), InvalidArgument);
  CHECK_THROWS_AS(QuantileLevel(5e-5), InvalidArgument);
  CHECK(QuantileLevel(0.1).value() == 0.1);
  CHECK(QuantileLevel(0.5).is_median());
}

TEST_CASE("tilted loss", "[core]") {
  CHECK(rho(0.25, 2.0) == 0.5);
  CHECK(rho(0.25, -2.0) == 1.5);
  CHECK(rho(0.5, -3.0) == 1.5);
  CHECK(rho(0.9, 0.0) == 0.0);
}
