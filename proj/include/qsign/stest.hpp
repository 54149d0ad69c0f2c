#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "qsign/core.hpp"
#include "qsign/noise.hpp"
#include "qsign/parallel.hpp"
#include "qsign/qr_solver.hpp"
#include "qsign/random.hpp"

namespace qsign {

/// Norm applied to the coefficient vector (A A^T)^{-1} A X^T omega. The
/// default is the sup norm (l1 penalty); an lq penalty pairs with the
/// exponent q / (q - 1).
class DualNorm {
 public:
  DualNorm() = default;

  static DualNorm infinity() { return DualNorm(); }

  /// Dual of the lq penalty norm.
  static DualNorm for_penalty(double q) {
    if (!(q >= 1.0)) throw InvalidArgument("penalty exponent must be >= 1");
    if (q == 1.0) return infinity();
    return exponent(q / (q - 1.0));
  }

  static DualNorm exponent(double e) {
    if (!(e >= 1.0)) throw InvalidArgument("norm exponent must be >= 1");
    DualNorm d;
    d.exponent_ = e;
    return d;
  }

  /// Parses "inf" or a numeric exponent such as "2".
  static DualNorm parse(const std::string& s) {
    if (s == "inf" || s == "infinity") return infinity();
    std::size_t used = 0;
    double e = 0.0;
    try {
      e = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || used == 0) throw InvalidArgument("unknown dual norm '" + s + "'");
    if (std::isinf(e)) return infinity();
    return exponent(e);
  }

  double value() const noexcept { return exponent_; }
  bool is_infinity() const noexcept { return std::isinf(exponent_); }

  double operator()(const Eigen::Ref<const Vector>& v) const {
    if (v.size() == 0) return 0.0;
    if (is_infinity()) return v.cwiseAbs().maxCoeff();
    if (exponent_ == 1.0) return v.cwiseAbs().sum();
    if (exponent_ == 2.0) return v.norm();
    return std::pow(v.cwiseAbs().array().pow(exponent_).sum(), 1.0 / exponent_);
  }

  std::string describe() const {
    if (is_infinity()) return "inf";
    std::string s = std::to_string(exponent_);
    s.erase(s.find_last_not_of('0') + 1);
    if (s.back() == '.') s.pop_back();
    return s;
  }

 private:
  double exponent_ = std::numeric_limits<double>::infinity();
};

/// `sign` doubles the statistic at tau = 1/2 so the median statistic is a
/// sum of residual signs; `box` reports the raw omega in [-tau, 1 - tau].
/// Decisions do not depend on the choice.
enum class StatisticScale { sign, box };

inline double statistic_multiplier(double tau, StatisticScale scale) noexcept {
  return scale == StatisticScale::sign ? loss_multiplier(tau) : 1.0;
}

/// Midranks of `keys` (1-based, ties averaged).
inline Vector midranks(const Eigen::Ref<const Vector>& keys) {
  const Index n = keys.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return keys(a) < keys(b); });
  Vector ranks(n);
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && keys(order[static_cast<std::size_t>(j + 1)]) == keys(order[static_cast<std::size_t>(i)])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) ranks(order[static_cast<std::size_t>(k)]) = avg;
    i = j + 1;
  }
  return ranks;
}

/// omega_i times the midrank of |r_i| (tau = 1/2) or of |r_i| rho_tau(r_i).
/// Zero-set entries get key 0 and hence the lowest ranks.
inline Vector rank_weighted_dual(const QuantileFit& fit, double tau) {
  const Index n = fit.dual.size();
  if (fit.residuals.size() != n) throw DimensionError("fit residuals and dual differ in length");
  Vector keys(n);
  for (Index i = 0; i < n; ++i) {
    const double r = fit.residuals(i);
    keys(i) = tau == 0.5 ? std::abs(r) : std::abs(r) * rho(tau, r);
  }
  for (Index i : fit.zero_set)
    if (i < n) keys(i) = 0.0;
  return fit.dual.cwiseProduct(midranks(keys));
}

/// Statistic evaluation on a fixed design and hypothesis. Holds the
/// constraint elimination and the factorization of A, so repeated calls only
/// cost one quantile fit.
class StatisticEngine {
 public:
  struct Value {
    double plain = 0.0;
    double ranked = 0.0;
    Vector scores;         // |coefficients| for the unweighted dual, scaled
    Vector ranked_scores;  // same for the rank-weighted dual (if requested)
    QuantileFit fit;
    bool degenerate = false;
  };

  StatisticEngine(const Matrix& X, const LinearHypothesis& h, double tau, DualNorm norm = {},
                  StatisticScale scale = StatisticScale::sign, SolverOptions options = {})
      : X_(X), hypothesis_(h), geometry_(h), solver_(X, h, options), tau_(tau), norm_(norm),
        multiplier_(statistic_multiplier(tau, scale)) {
    if (X.cols() != h.p()) throw DimensionError("hypothesis and design column counts differ");
  }

  const Matrix& design() const noexcept { return X_; }
  const LinearHypothesis& hypothesis() const noexcept { return hypothesis_; }
  const HypothesisGeometry& geometry() const noexcept { return geometry_; }
  double tau() const noexcept { return tau_; }
  DualNorm norm() const noexcept { return norm_; }
  double multiplier() const noexcept { return multiplier_; }

  Value evaluate(const Vector& y, bool with_ranks = false) const {
    Value v;
    v.fit = solver_.fit(y, tau_);
    if (!v.fit.ok()) throw SolverError("constrained fit hit the iteration limit");
    v.degenerate = v.fit.status == FitStatus::degenerate_dual;
    v.scores = (multiplier_ * geometry_.coefficients(X_.transpose() * v.fit.dual)).cwiseAbs();
    v.plain = norm_(v.scores);
    if (with_ranks) {
      const Vector w = rank_weighted_dual(v.fit, tau_);
      v.ranked_scores = (multiplier_ * geometry_.coefficients(X_.transpose() * w)).cwiseAbs();
      v.ranked = norm_(v.ranked_scores);
    }
    return v;
  }

  double statistic(const Vector& y, bool rank_weighted = false) const {
    const Value v = evaluate(y, rank_weighted);
    return rank_weighted ? v.ranked : v.plain;
  }

 private:
  Matrix X_;
  LinearHypothesis hypothesis_;
  HypothesisGeometry geometry_;
  ConstrainedSolver solver_;
  double tau_;
  DualNorm norm_;
  double multiplier_;
};

inline double zero_threshold(const RegressionProblem& problem, const LinearHypothesis& h,
                             QuantileLevel tau, DualNorm norm = {},
                             StatisticScale scale = StatisticScale::sign) {
  return StatisticEngine(problem.X(), h, tau, norm, scale).statistic(problem.y());
}

// ---------------------------------------------------------------------------
// Monte Carlo null distribution

/// Slack used when comparing a statistic against a sample: statistics that
/// are equal in exact arithmetic (integer-valued sign sums, for instance)
/// must compare equal after rounding.
inline double tie_slack(double x) noexcept { return 1e-9 * (1.0 + std::abs(x)); }

/// s strictly above x, beyond rounding.
inline bool exceeds(double s, double x) noexcept { return s > x + tie_slack(x); }

struct NullDistribution {
  std::vector<double> samples;  // ascending
  Index R = 0;
  std::uint64_t seed = 0;
  double tau = 0.5;
  std::string noise;  // NoiseSpec::describe()
  Index failures = 0;
  Index degenerate = 0;
};

/// Order statistic number ceil((1 - alpha) R), 1-based.
inline Index critical_index(Index R, double alpha) {
  const double k = std::ceil((1.0 - alpha) * static_cast<double>(R) - 1e-9);
  return std::clamp<Index>(static_cast<Index>(k), 1, R);
}

inline double critical_value(const NullDistribution& null, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (null.samples.empty()) throw InvalidArgument("empty null distribution");
  const Index R = static_cast<Index>(null.samples.size());
  return null.samples[static_cast<std::size_t>(critical_index(R, alpha) - 1)];
}

/// (1 + #{samples >= s}) / (R + 1).
inline double p_value(const NullDistribution& null, double s) {
  if (null.samples.empty()) throw InvalidArgument("empty null distribution");
  // samples counted are those x with !(s > x + slack(x)); the predicate is
  // monotone along the sorted samples
  const auto it = std::partition_point(null.samples.begin(), null.samples.end(),
                                       [&](double x) { return exceeds(s, x); });
  const auto count = static_cast<double>(null.samples.end() - it);
  return (1.0 + count) / (static_cast<double>(null.samples.size()) + 1.0);
}

namespace detail {

inline constexpr std::uint64_t kNullStream = 0x6e756c6cULL;      // "null"
inline constexpr std::uint64_t kHomopowerStream = 0x686f6d6fULL;  // "homo"

struct NullDraws {
  std::vector<StatisticEngine::Value> values;  // failed replicates left empty
  std::vector<char> failed;
  Index failures = 0;
};

/// Simulates R responses X beta0 + eps under H0 and evaluates the engine on
/// each. Replicate r draws from the stream keyed by (seed, stream, r,
/// attempt); one retry with a fresh stream, then it counts as a failure.
inline NullDraws simulate_null(const StatisticEngine& engine, Index R, std::uint64_t seed,
                               std::uint64_t stream, const NoiseSpec& noise, bool with_ranks,
                               unsigned threads) {
  const Vector mean = engine.design() * engine.geometry().min_norm_feasible();
  const NoiseSampler sampler(noise, engine.tau());
  const Index n = engine.design().rows();
  NullDraws out;
  out.values.resize(static_cast<std::size_t>(R));
  out.failed.assign(static_cast<std::size_t>(R), 0);
  parallel_for(R, threads, [&](long r) {
    for (std::uint64_t attempt = 0; attempt < 2; ++attempt) {
      RandomStream rng({seed, stream, static_cast<std::uint64_t>(r), attempt});
      const Vector y = mean + sampler.draw(rng, n);
      try {
        out.values[static_cast<std::size_t>(r)] = engine.evaluate(y, with_ranks);
        return;
      } catch (const NumericalError&) {
      }
    }
    out.failed[static_cast<std::size_t>(r)] = 1;
  });
  out.failures = std::count(out.failed.begin(), out.failed.end(), char{1});
  if (static_cast<double>(out.failures) > 0.01 * static_cast<double>(R))
    throw SolverError(std::to_string(out.failures) + " of " + std::to_string(R) +
                      " null replicates failed");
  return out;
}

inline NullDistribution collect(const NullDraws& draws, bool rank_weighted, std::uint64_t seed,
                                double tau, const NoiseSpec& noise) {
  NullDistribution null;
  null.seed = seed;
  null.tau = tau;
  null.noise = noise.describe();
  null.failures = draws.failures;
  for (std::size_t r = 0; r < draws.values.size(); ++r) {
    if (draws.failed[r]) continue;
    const auto& v = draws.values[r];
    null.samples.push_back(rank_weighted ? v.ranked : v.plain);
    if (v.degenerate) ++null.degenerate;
  }
  std::sort(null.samples.begin(), null.samples.end());
  null.R = static_cast<Index>(null.samples.size());
  return null;
}

inline void check_replicates(Index R) {
  if (R < 100) throw InvalidArgument("at least 100 Monte Carlo replicates are required");
}

}  // namespace detail

/// Null distribution of the statistic for a prepared engine.
inline NullDistribution sample_null(const StatisticEngine& engine, Index R, std::uint64_t seed,
                                    const NoiseSpec& noise = {}, bool rank_weighted = false,
                                    unsigned threads = 0) {
  detail::check_replicates(R);
  const auto draws =
      detail::simulate_null(engine, R, seed, detail::kNullStream, noise, rank_weighted, threads);
  return detail::collect(draws, rank_weighted, seed, engine.tau(), noise);
}

inline NullDistribution sample_null(const Matrix& X, const LinearHypothesis& h, QuantileLevel tau,
                                    Index R, std::uint64_t seed, const NoiseSpec& noise = {},
                                    bool rank_weighted = false, DualNorm norm = {},
                                    unsigned threads = 0,
                                    StatisticScale scale = StatisticScale::sign) {
  return sample_null(StatisticEngine(X, h, tau, norm, scale), R, seed, noise, rank_weighted,
                     threads);
}

namespace detail {

/// Sorted draws of each entry of the unweighted score vector W under H0.
inline std::vector<std::vector<double>> score_columns(const StatisticEngine& engine, Index R,
                                                      std::uint64_t seed, std::uint64_t stream,
                                                      const NoiseSpec& noise, unsigned threads) {
  check_replicates(R);
  const auto draws = simulate_null(engine, R, seed, stream, noise, false, threads);
  const Index m = engine.hypothesis().m();
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(m));
  for (Index k = 0; k < m; ++k) {
    auto& col = cols[static_cast<std::size_t>(k)];
    for (std::size_t r = 0; r < draws.values.size(); ++r)
      if (!draws.failed[r]) col.push_back(draws.values[r].scores(k));
    std::sort(col.begin(), col.end());
  }
  return cols;
}

inline double upper_quantile(const std::vector<double>& sorted, double alpha) {
  const Index idx = critical_index(static_cast<Index>(sorted.size()), alpha);
  return sorted[static_cast<std::size_t>(idx - 1)];
}

inline Vector diag_from_columns(const std::vector<std::vector<double>>& cols, double alpha) {
  Vector d(static_cast<Index>(cols.size()));
  for (Index k = 0; k < d.size(); ++k) {
    d(k) = upper_quantile(cols[static_cast<std::size_t>(k)], alpha);
    if (!(d(k) > tie_slack(0.0)))
      throw DegenerateHypothesisError(
          "homopower quantile of hypothesis row " + std::to_string(k + 1) + " is zero",
          static_cast<int>(k));
  }
  return d;
}

}  // namespace detail

/// Per-entry (1 - alpha)-quantiles of the unweighted score vector W under
/// H0, using the sup-norm order-statistic rule.
inline Vector homopower_diag(const StatisticEngine& engine, double alpha, Index R,
                             std::uint64_t seed, const NoiseSpec& noise = {},
                             unsigned threads = 0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  return detail::diag_from_columns(
      detail::score_columns(engine, R, seed, detail::kHomopowerStream, noise, threads), alpha);
}

inline Vector homopower_diag(const Matrix& X, const LinearHypothesis& h, QuantileLevel tau,
                             double alpha, Index R, std::uint64_t seed, const NoiseSpec& noise = {},
                             unsigned threads = 0) {
  return homopower_diag(StatisticEngine(X, h, tau), alpha, R, seed, noise, threads);
}

// ---------------------------------------------------------------------------
// Test

struct TestOptions {
  Index mc_runs = 10000;
  std::uint64_t seed = 0;
  NoiseSpec noise;
  bool rank_weighted = false;
  bool homopower = false;
  DualNorm dual_norm;
  StatisticScale scale = StatisticScale::sign;
  unsigned threads = 0;
  SolverOptions solver;
};

struct TestReport {
  double statistic = 0.0;
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  double tau = 0.5;
  double alpha = 0.05;
  Index R = 0;
  std::uint64_t seed = 0;
  std::optional<Vector> homopower_diag;
  std::string dual_norm = "inf";
  bool rank_weighted = false;
  bool degenerate_dual = false;
  Index failures = 0;
  NullDistribution null;
};

/// Seed for the homopower pre-pass, independent of the null sampling.
inline std::uint64_t homopower_seed(std::uint64_t seed) {
  return stream_key({seed, detail::kHomopowerStream});
}

/// Hypothesis actually tested: rescaled by the homopower diagonal when
/// requested.
inline LinearHypothesis effective_hypothesis(const Matrix& X, const LinearHypothesis& h,
                                             double tau, double alpha, const TestOptions& o,
                                             std::optional<Vector>* diag = nullptr) {
  if (!o.homopower) return h;
  const StatisticEngine plain(X, h, tau, o.dual_norm, o.scale, o.solver);
  Vector d = homopower_diag(plain, alpha, o.mc_runs, homopower_seed(o.seed), o.noise, o.threads);
  LinearHypothesis rescaled = h.rescaled(d);
  if (diag) *diag = std::move(d);
  return rescaled;
}

inline TestReport run_test(const RegressionProblem& problem, const LinearHypothesis& h,
                           QuantileLevel tau, double alpha, const TestOptions& o = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (h.p() != problem.p()) throw DimensionError("hypothesis and design column counts differ");
  TestReport rep;
  rep.tau = tau;
  rep.alpha = alpha;
  rep.seed = o.seed;
  rep.dual_norm = o.dual_norm.describe();
  rep.rank_weighted = o.rank_weighted;

  const LinearHypothesis tested =
      effective_hypothesis(problem.X(), h, tau, alpha, o, &rep.homopower_diag);
  const StatisticEngine engine(problem.X(), tested, tau, o.dual_norm, o.scale, o.solver);
  rep.null = sample_null(engine, o.mc_runs, o.seed, o.noise, o.rank_weighted, o.threads);
  const auto observed = engine.evaluate(problem.y(), o.rank_weighted);
  rep.statistic = o.rank_weighted ? observed.ranked : observed.plain;
  rep.degenerate_dual = observed.degenerate;
  rep.R = rep.null.R;
  rep.failures = rep.null.failures;
  rep.critical_value = critical_value(rep.null, alpha);
  rep.p_value = p_value(rep.null, rep.statistic);
  rep.reject = exceeds(rep.statistic, rep.critical_value);
  return rep;
}

// ---------------------------------------------------------------------------
// Confidence intervals by test inversion

struct IntervalSearch {
  std::optional<double> lower_bound;  // search limits; default: expand from the centre
  std::optional<double> upper_bound;
  double tolerance = 0.0;  // 0: 1e-8 (1 + |centre| + width scale)
  int scan_points = 64;
};

struct ConfidenceInterval {
  Index coefficient = 0;  // 0-based
  double lo = 0.0;
  double hi = 0.0;
  double center = 0.0;
  double critical_value = 0.0;
  double alpha = 0.05;
  bool non_interval = false;  // the scan found accepted points outside [lo, hi]
  bool lower_open = false;    // acceptance reached the search limit
  bool upper_open = false;
};

/// Set of values c with H0: beta_j = c not rejected. Testing beta_j = c on
/// y is testing beta_j = 0 on y - c x_j, so one engine and one null
/// distribution serve every c.
inline ConfidenceInterval confidence_interval(const RegressionProblem& problem, Index j,
                                              QuantileLevel tau, double alpha,
                                              const IntervalSearch& search = {},
                                              const TestOptions& o = {}) {
  const Index p = problem.p();
  if (j < 0 || j >= p)
    throw InvalidArgument("coefficient index " + std::to_string(j + 1) + " outside 1.." +
                          std::to_string(p));
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  Matrix A = Matrix::Zero(1, p);
  A(0, j) = 1.0;
  const LinearHypothesis h0(A, Vector::Zero(1));
  const StatisticEngine engine(problem.X(), h0, tau, o.dual_norm, o.scale, o.solver);
  const NullDistribution null =
      sample_null(engine, o.mc_runs, o.seed, o.noise, o.rank_weighted, o.threads);

  ConfidenceInterval ci;
  ci.coefficient = j;
  ci.alpha = alpha;
  ci.critical_value = critical_value(null, alpha);
  const Vector xj = problem.X().col(j);
  auto accepted = [&](double c) {
    const Vector y = problem.y() - c * xj;
    return !exceeds(engine.statistic(y, o.rank_weighted), ci.critical_value);
  };

  const QuantileFit full = fit_quantile(problem, tau);
  ci.center = full.beta(j);
  if (!accepted(ci.center)) {
    // the unconstrained estimate should always be accepted; fall back to a
    // scan of the search window before giving up
    const double lo = search.lower_bound.value_or(ci.center - 1.0);
    const double hi = search.upper_bound.value_or(ci.center + 1.0);
    bool found = false;
    for (int k = 0; k <= search.scan_points && !found; ++k) {
      const double c = lo + (hi - lo) * k / search.scan_points;
      if (accepted(c)) {
        ci.center = c;
        found = true;
      }
    }
    if (!found) throw EmptyRegionError("no coefficient value is accepted in the search window");
  }

  const double yscale = problem.y().cwiseAbs().maxCoeff();
  const double xscale = std::max(xj.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  double step = std::max(1.0, yscale / xscale) * 1e-3 + 1e-3 * std::abs(ci.center);
  const double tol = search.tolerance > 0.0
                         ? search.tolerance
                         : 1e-8 * (1.0 + std::abs(ci.center) + yscale / xscale);

  // outward: find the first rejected point by doubling, then bisect
  auto edge = [&](double direction, std::optional<double> limit, bool& open) {
    double inside = ci.center;
    double s = step;
    double outside = 0.0;
    for (int it = 0;; ++it) {
      double c = ci.center + direction * s;
      if (limit && direction * (c - *limit) >= 0.0) {
        c = *limit;
        if (accepted(c)) {
          open = true;
          return c;
        }
        outside = c;
        break;
      }
      if (!accepted(c)) {
        outside = c;
        break;
      }
      inside = c;
      s *= 2.0;
      if (it > 200) {
        open = true;
        return c;
      }
    }
    while (std::abs(outside - inside) > tol) {
      const double mid = 0.5 * (inside + outside);
      (accepted(mid) ? inside : outside) = mid;
    }
    return inside;
  };
  ci.lo = edge(-1.0, search.lower_bound, ci.lower_open);
  ci.hi = edge(1.0, search.upper_bound, ci.upper_open);

  // coarse scan beyond the interval for further accepted points
  if (search.scan_points > 0) {
    const double width = std::max(ci.hi - ci.lo, tol);
    const double lo = search.lower_bound.value_or(ci.lo - width);
    const double hi = search.upper_bound.value_or(ci.hi + width);
    for (int k = 0; k <= search.scan_points; ++k) {
      const double c = lo + (hi - lo) * k / search.scan_points;
      if ((c < ci.lo - tol || c > ci.hi + tol) && accepted(c)) {
        ci.non_interval = true;
        break;
      }
    }
  }
  return ci;
}

}  // namespace qsign
