#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "qsign/designs.hpp"
#include "f_oracle.hpp"
#include "test_support.hpp"

using namespace qsign;
using namespace qsign::testing;
using Catch::Approx;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("paired design arithmetic", "[designs]") {
  const auto d = paired_design({vec({1, 2}), vec({3, 1})});
  CHECK(d.problem.y() == vec({2, -1}));
  CHECK(d.problem.X() == Matrix::Ones(2, 1));
  CHECK(d.hypothesis.A()(0, 0) == 1.0);
  CHECK(d.hypothesis.b()(0) == 0.0);
  CHECK_THROWS_AS(paired_design({vec({1, 2}), vec({1})}), DimensionError);
  CHECK(paired_design({vec({1, 2}), vec({1, 2})}).problem.y().isZero());
}

TEST_CASE("paired statistic equals the sign-test relation", "[designs]") {
  // v - u = (+, +, +, -, +)
  const PairedData small{vec({0, 0, 0, 0, 0}), vec({1, 2, 3, -1, 4})};
  const auto st = classic_sign_test(small);
  CHECK(st.statistic == 4);
  const auto d = paired_design(small);
  CHECK(zero_threshold(d.problem, d.hypothesis, QuantileLevel(0.5)) == 3.0);

  RandomStream rs{31};
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = uniform_int(rs, 5, 50);
    const PairedData data{gaussian_vector(rs, n), gaussian_vector(rs, n)};
    const auto dd = paired_design(data);
    const auto s = classic_sign_test(data);
    CHECK(zero_threshold(dd.problem, dd.hypothesis, QuantileLevel(0.5)) ==
          static_cast<double>(std::abs(2 * s.statistic - n)));
  }
}

TEST_CASE("classic sign test p-values", "[designs]") {
  // 2 P(B >= 15), B ~ Bin(20, 1/2) = 2 * 21700 / 2^20
  Vector u = Vector::Zero(20), v(20);
  for (int i = 0; i < 20; ++i) v(i) = i < 15 ? 1.0 : -1.0;
  auto r = classic_sign_test({u, v});
  CHECK(r.statistic == 15);
  CHECK(r.p_value == Approx(2.0 * 21700 / 1048576).epsilon(1e-12));
  for (int i = 0; i < 20; ++i) v(i) = i < 10 ? 1.0 : -1.0;
  CHECK(classic_sign_test({u, v}).p_value == 1.0);
  // ties dropped
  v(0) = 0.0;
  r = classic_sign_test({u, v});
  CHECK(r.ties == 1);
  CHECK(r.n == 19);
  CHECK_THROWS_AS(classic_sign_test({u, u}), InvalidArgument);
}

TEST_CASE("unpaired design and the median test", "[designs]") {
  const auto d = unpaired_design(vec({1, 2, 3}), vec({4, 5}));
  CHECK(d.problem.n() == 5);
  CHECK(d.problem.X().col(1) == vec({0, 0, 0, 1, 1}));
  CHECK(d.hypothesis.A() == (Matrix(1, 2) << 0, 1).finished());

  // v entirely above: hypergeometric P(a = 3) + P(a = 0) = 2 / 20
  const auto mt = median_test(vec({1, 2, 3}), vec({4, 5, 6}));
  CHECK(mt.statistic == 3);
  CHECK(mt.median == 3.5);
  CHECK(mt.p_value == Approx(0.1));

  RandomStream rs{32};
  for (int rep = 0; rep < 200; ++rep) {
    const Index nu = uniform_int(rs, 4, 40);
    const Index nv = rep % 3 ? nu : uniform_int(rs, 4, 40);
    const Vector u = gaussian_vector(rs, nu);
    const Vector v = gaussian_vector(rs, nv).array() + rs.normal();
    const auto dd = unpaired_design(u, v);
    CHECK(zero_threshold(dd.problem, dd.hypothesis, QuantileLevel(0.5)) ==
          Approx(static_cast<double>(median_test(u, v).statistic)).margin(1e-9));
  }

  // a large shift puts every v above the pooled median
  const Vector u = Vector::LinSpaced(10, 0, 1);
  const Vector v = Vector::LinSpaced(10, 0, 1).array() + 100.0;
  const auto far = unpaired_design(u, v);
  CHECK(zero_threshold(far.problem, far.hypothesis, QuantileLevel(0.5)) == Approx(10.0));
  // identical samples sit at the null mode
  const auto same = unpaired_design(u, u);
  CHECK(zero_threshold(same.problem, same.hypothesis, QuantileLevel(0.5)) <= 1.0);
}

TEST_CASE("median test p-values sum the hypergeometric tail", "[designs]") {
  // pool of 8, 4 above the median; v has 4 draws
  // P(a) = C(4,a) C(4,4-a) / C(8,4): 1, 16, 36, 16, 1 over 70
  const auto r = median_test(vec({1, 2, 3, 6}), vec({4, 5, 7, 8}));
  CHECK(r.above == 3);
  CHECK(r.statistic == 2);
  CHECK(r.p_value == Approx(34.0 / 70));
}

TEST_CASE("total variation design", "[designs]") {
  const auto d = tv_design({vec({1, 2, 3}), 0.5});
  Matrix expected(2, 3);
  expected << -1, 1, 0, 0, -1, 1;
  CHECK(d.hypothesis.A() == expected);
  CHECK(d.problem.X() == Matrix::Identity(3, 3));
  CHECK_FALSE(d.warnings.empty());

  const auto big = tv_design({Vector::Zero(40), 0.1});
  CHECK(big.warnings.empty());
  CHECK((big.hypothesis.A() * Vector::Ones(40)).isZero());
  CHECK(detail::numerical_rank(big.hypothesis.A()) == 39);
  CHECK_THROWS_AS(tv_design({vec({1, 2}), 0.5}), DimensionError);
}

TEST_CASE("total variation statistic is a sign CUSUM", "[designs]") {
  // H0 fit is the constant median; coefficients are partial sums of signs
  RandomStream rs{33};
  const Vector y = gaussian_vector(rs, 31);
  const auto d = tv_design({y, 0.5});
  std::vector<double> s(y.begin(), y.end());
  std::nth_element(s.begin(), s.begin() + 15, s.end());
  const double med = s[15];
  double partial = 0.0, best = 0.0;
  for (Index i = 0; i < 30; ++i) {
    partial += (y(i) > med) - (y(i) < med);
    best = std::max(best, std::abs(partial));
  }
  CHECK(zero_threshold(d.problem, d.hypothesis, QuantileLevel(0.5)) == Approx(best));
}

TEST_CASE("lasso path", "[designs]") {
  RandomStream rs{34};
  for (int rep = 0; rep < 10; ++rep) {
    const double tau = rep % 2 ? 0.5 : 0.3;
    Vector y = gaussian_vector(rs, 25);
    y.tail(12).array() += 2.0;
    const auto d = tv_design({y, tau});

    const auto zero = lasso_path(d.problem, d.hypothesis, QuantileLevel(tau), {0.0});
    REQUIRE(zero.size() == 1);
    CHECK((zero[0].beta - y).cwiseAbs().maxCoeff() < 1e-9);  // X = I interpolates

    const double S = zero_threshold(d.problem, d.hypothesis, QuantileLevel(tau));
    REQUIRE(S > 0);
    const auto path = lasso_path(d.problem, d.hypothesis, QuantileLevel(tau), lambda_grid(2 * S, 21));
    for (std::size_t k = 1; k < path.size(); ++k)
      CHECK(path[k].penalty_norm <= path[k - 1].penalty_norm + 1e-9);
    CHECK(path.back().penalty_norm < 1e-9);

    const auto bracket = lasso_path(d.problem, d.hypothesis, QuantileLevel(tau), {0.98 * S, 1.02 * S});
    CHECK(bracket[0].penalty_norm > 1e-6);
    CHECK(bracket[1].penalty_norm < 1e-9);
  }
}

TEST_CASE("lasso path marker row", "[designs]") {
  const auto d = tv_design({Vector::LinSpaced(10, 0, 1), 0.5});
  auto rows = lasso_path(d.problem, d.hypothesis, QuantileLevel(0.5), {0.0, 1.0, 2.0}, 1.5);
  CHECK(rows.size() == 4);
  CHECK(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.marker; }) == 1);
  CHECK(rows[2].lambda == 1.5);
  CHECK(rows[2].marker);
  rows = lasso_path(d.problem, d.hypothesis, QuantileLevel(0.5), {0.0, 1.0, 2.0}, 1.0);
  CHECK(rows.size() == 3);
  CHECK(rows[1].marker);
  CHECK_THROWS_AS(lasso_path(d.problem, d.hypothesis, QuantileLevel(0.5), {1.0, 0.5}), InvalidArgument);
  CHECK_THROWS_AS(lasso_path(d.problem, d.hypothesis, QuantileLevel(0.5), {-1.0}), InvalidArgument);

  // constant series: no jumps at any positive penalty
  const auto flat = tv_design({Vector::Constant(12, 2.0), 0.5});
  for (const auto& r : lasso_path(flat.problem, flat.hypothesis, QuantileLevel(0.5), lambda_grid(1.0, 5)))
    CHECK(r.penalty_norm < 1e-12);
}

TEST_CASE("F statistic with one restriction is the squared t statistic", "[designs]") {
  RandomStream rs{35};
  for (int rep = 0; rep < 50; ++rep) {
    const Index p = uniform_int(rs, 2, 6);
    const Index n = p + uniform_int(rs, 3, 40);
    const auto pr = random_problem(rs, n, p);
    const Vector a = gaussian_vector(rs, p);
    const double b = rs.normal();
    // t via the normal equations
    const Matrix XtX = pr.X().transpose() * pr.X();
    const Eigen::LDLT<Matrix> ldlt(XtX);
    const Vector beta = ldlt.solve(pr.X().transpose() * pr.y());
    const double s2 = (pr.y() - pr.X() * beta).squaredNorm() / static_cast<double>(n - p);
    const double t = (a.dot(beta) - b) / std::sqrt(s2 * a.dot(ldlt.solve(a)));
    const auto f = f_test(pr, LinearHypothesis(a.transpose(), Vector::Constant(1, b)));
    CHECK(f.statistic == Approx(t * t).epsilon(1e-10));
    CHECK(f.df1 == 1);
    CHECK(f.df2 == n - p);
  }
}

TEST_CASE("F test p-values match quadrature of the density", "[designs]") {
  RandomStream rs{36};
  for (int rep = 0; rep < 50; ++rep) {
    const Index p = uniform_int(rs, 2, 6);
    const Index n = p + uniform_int(rs, 2, 60);
    const Index m = uniform_int(rs, 1, p);
    const auto pr = random_problem(rs, n, p);
    const LinearHypothesis h(gaussian_matrix(rs, m, p), 0.3 * gaussian_vector(rs, m));
    const auto f = f_test(pr, h);
    const double ref = f_tail_quadrature(f.statistic, static_cast<double>(m), static_cast<double>(n - p));
    CHECK(std::abs(f.p_value - ref) <= 1e-6);
    CHECK(f.p_value > 0.0);
    CHECK(f.p_value <= 1.0);
  }
}

TEST_CASE("F test boundaries", "[designs]") {
  RandomStream rs{37};
  const auto pr = random_problem(rs, 30, 3);
  const Vector beta = pr.X().colPivHouseholderQr().solve(pr.y());
  Matrix A(2, 3);
  A << 1, 0, 1, 0, 1, -1;
  const auto f = f_test(pr, LinearHypothesis(A, A * beta));
  CHECK(f.statistic < 1e-20);
  CHECK(f.p_value == Approx(1.0));

  // p-value decreasing in the statistic
  double last = 1.0;
  for (double shift : {0.0, 0.1, 0.3, 0.6, 1.0, 2.0}) {
    const auto g = f_test(pr, LinearHypothesis(A, A * beta + Vector::Constant(2, shift)));
    CHECK(g.p_value <= last);
    last = g.p_value;
  }

  CHECK_THROWS_AS(f_test(RegressionProblem(vec({1, 2}), Matrix::Identity(2, 2)),
                         LinearHypothesis(Matrix::Identity(1, 2), Vector::Zero(1))),
                  InvalidArgument);
}
