#pragma once

// Simulation studies: levels, power curves, homopower comparisons and
// robustness to heavy-tailed errors. Designs are drawn once per study from
// the study seed and the null distribution is sampled once per statistic;
// dataset replicate r always draws its errors from the stream (seed, study,
// r), so grid points share random numbers and power curves are smooth.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "qsign/core.hpp"
#include "qsign/designs.hpp"
#include "qsign/noise.hpp"
#include "qsign/parallel.hpp"
#include "qsign/random.hpp"
#include "qsign/stest.hpp"

namespace qsign {

enum class TestKind { infty_s, infty_ranks, f_test };

inline const char* to_string(TestKind k) {
  switch (k) {
    case TestKind::infty_s: return "infty-s";
    case TestKind::infty_ranks: return "infty-ranks";
    case TestKind::f_test: return "f-test";
  }
  return "unknown";
}

inline TestKind parse_test_kind(const std::string& s) {
  if (s == "infty-s") return TestKind::infty_s;
  if (s == "infty-ranks") return TestKind::infty_ranks;
  if (s == "f-test") return TestKind::f_test;
  throw InvalidArgument("unknown test '" + s + "' (expected infty-s, infty-ranks or f-test)");
}

struct SimulationConfig {
  Index n = 100;
  Index p = 20;
  Index m = 5;
  double tau = 0.5;
  double alpha = 0.05;
  std::vector<double> delta_grid{0.0};
  NoiseSpec noise = NoiseSpec::student(3.0);         // data-generating errors
  NoiseSpec design_noise = NoiseSpec::student(2.0);  // entries of X
  NoiseSpec calibration;                             // null sampling, gaussian
  Index reps = 2000;
  Index mc_runs = 2000;
  std::uint64_t seed = 0;
  std::vector<TestKind> tests{TestKind::infty_s};
  unsigned threads = 0;

  void validate() const {
    if (reps < 100) throw InvalidArgument("reps must be at least 100");
    if (mc_runs < 100) throw InvalidArgument("mc_runs must be at least 100");
    if (delta_grid.empty()) throw InvalidArgument("delta grid is empty");
    if (tests.empty()) throw InvalidArgument("no tests selected");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    (void)QuantileLevel(tau);
    if (n < 1 || p < 1) throw InvalidArgument("sizes must be positive");
    noise.validate();
    design_noise.validate();
    calibration.validate();
  }

  bool has(TestKind k) const { return std::find(tests.begin(), tests.end(), k) != tests.end(); }

  /// Full-scale replication counts (10^4 datasets, 10^4 null draws).
  SimulationConfig full_scale() const {
    SimulationConfig c = *this;
    c.reps = 10000;
    c.mc_runs = 10000;
    return c;
  }
};

/// Heavy-tailed regression: n = 100, p = 20, first 5 difference rows,
/// Student-2 design, alpha = 0.01, Student errors with `df`.
inline SimulationConfig robustness_setting(double df = 3.0) {
  SimulationConfig c;
  c.alpha = 0.01;
  c.noise = NoiseSpec::student(df);
  c.tests = {TestKind::infty_s, TestKind::f_test};
  return c;
}

/// Two-sample location shift, n per group, t3 errors, 21-point grid on [0, 2].
inline SimulationConfig two_sample_setting(Index n = 100) {
  SimulationConfig c;
  c.n = n;
  c.p = 2;
  c.m = 1;
  c.noise = NoiseSpec::student(3.0);
  c.delta_grid.clear();
  for (int k = 0; k <= 20; ++k) c.delta_grid.push_back(0.1 * k);
  c.tests = {TestKind::infty_s, TestKind::infty_ranks, TestKind::f_test};
  return c;
}

/// Gaussian design and errors, n = 100, p = 20, m = 2.
inline SimulationConfig homopower_setting() {
  SimulationConfig c;
  c.m = 2;
  c.noise = NoiseSpec::gaussian();
  c.design_noise = NoiseSpec::gaussian();
  c.delta_grid.clear();
  for (int k = 0; k <= 10; ++k) c.delta_grid.push_back(0.05 * k);
  return c;
}

struct Tally {
  Index rejections = 0;
  Index total = 0;
  Index failures = 0;

  double rate() const { return total ? static_cast<double>(rejections) / static_cast<double>(total) : 0.0; }
  double standard_error() const {
    if (!total) return 0.0;
    const double r = rate();
    return std::sqrt(r * (1.0 - r) / static_cast<double>(total));
  }
};

struct LevelRow {
  TestKind test;
  double df = 0.0;  // error degrees of freedom (robustness tables)
  Tally tally;
};

struct PowerRow {
  TestKind test;
  double delta = 0.0;
  Tally tally;
};

struct HomopowerRow {
  bool rescaled = false;
  int alternative = 1;  // beta = delta e_k
  double delta = 0.0;
  Tally tally;
  double argmax_first = 0.0;  // share of datasets whose largest score is entry 1
};

struct HomopowerResult {
  Vector diag;                // homopower diagonal d
  Vector requantiles;         // fresh (1 - alpha)-quantiles of the rescaled scores
  Vector requantile_se;       // their Monte Carlo standard errors
  std::vector<HomopowerRow> rows;
};

namespace detail {

inline constexpr std::uint64_t kDesignStream = 0x64657369ULL;  // "desi"
inline constexpr std::uint64_t kLevelStudy = 1;
inline constexpr std::uint64_t kPowerStudy = 2;
inline constexpr std::uint64_t kHomopowerStudy = 3;
inline constexpr std::uint64_t kRequantileStream = 4;

inline Matrix draw_matrix(const NoiseSpec& spec, Index rows, Index cols, RandomStream& rs) {
  const NoiseSampler s(spec, 0.5);
  Matrix X(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) X(i, j) = s(rs);
  return X;
}

/// Decision rule of one sign statistic: engine plus calibrated critical
/// value.
struct Calibrated {
  double critical = 0.0;
  NullDistribution null;
};

inline Calibrated calibrate(const StatisticEngine& engine, const SimulationConfig& c, bool ranks) {
  Calibrated cal;
  cal.null = sample_null(engine, c.mc_runs, c.seed, c.calibration, ranks, c.threads);
  cal.critical = critical_value(cal.null, c.alpha);
  return cal;
}

struct Outcome {
  bool failed = false;
  bool reject_s = false;
  bool reject_ranks = false;
  bool reject_f = false;
};

/// Evaluates the selected tests on y.
inline Outcome decide(const StatisticEngine& engine, const Calibrated* s, const Calibrated* ranks,
                      bool f, const Matrix& X, const LinearHypothesis& h, const Vector& y,
                      double alpha) {
  Outcome o;
  try {
    if (s || ranks) {
      const auto v = engine.evaluate(y, ranks != nullptr);
      if (s) o.reject_s = exceeds(v.plain, s->critical);
      if (ranks) o.reject_ranks = exceeds(v.ranked, ranks->critical);
    }
    if (f) o.reject_f = f_test(RegressionProblem(y, X), h).p_value <= alpha;
  } catch (const NumericalError&) {
    o.failed = true;
  }
  return o;
}

inline void add(Tally& t, bool failed, bool reject) {
  if (failed) {
    ++t.failures;
    return;
  }
  ++t.total;
  t.rejections += reject;
}

/// Runs `decide` for every replicate; `response(r)` builds dataset r.
template <class Response>
std::vector<Outcome> replicate(const SimulationConfig& c, const StatisticEngine& engine,
                               const Calibrated* s, const Calibrated* ranks, const Matrix& X,
                               const LinearHypothesis& h, Response&& response) {
  std::vector<Outcome> out(static_cast<std::size_t>(c.reps));
  parallel_for(c.reps, c.threads, [&](long r) {
    out[static_cast<std::size_t>(r)] =
        decide(engine, s, ranks, c.has(TestKind::f_test), X, h, response(r), c.alpha);
  });
  return out;
}

inline std::vector<std::pair<TestKind, Tally>> tallies(const SimulationConfig& c,
                                                       const std::vector<Outcome>& outcomes) {
  std::vector<std::pair<TestKind, Tally>> rows;
  for (TestKind k : c.tests) {
    Tally t;
    for (const auto& o : outcomes)
      add(t, o.failed,
          k == TestKind::infty_s ? o.reject_s : k == TestKind::infty_ranks ? o.reject_ranks : o.reject_f);
    rows.emplace_back(k, t);
  }
  return rows;
}

/// Regression design of the level study: X, hypothesis (first m
/// difference rows), and the fixed beta with b = A beta.
struct LevelSetup {
  Matrix X;
  LinearHypothesis h;
  Vector beta;
};

inline LevelSetup level_setup(const SimulationConfig& c) {
  if (c.m < 1 || c.m >= c.p) throw InvalidArgument("level study needs 1 <= m < p");
  RandomStream rs({c.seed, kDesignStream, kLevelStudy});
  Matrix X = draw_matrix(c.design_noise, c.n, c.p, rs);
  Vector beta(c.p);
  for (Index j = 0; j < c.p; ++j) beta(j) = rs.normal();
  const Matrix A = difference_matrix(c.m, c.p);
  return {X, LinearHypothesis(A, A * beta), beta};
}

/// Empirical quantile standard error from the order statistics
/// k -/+ sqrt(R alpha (1 - alpha)), i.e. a distribution-free 1-sigma band.
inline double quantile_standard_error(const std::vector<double>& sorted, double alpha) {
  const auto R = static_cast<Index>(sorted.size());
  const Index k = critical_index(R, alpha);
  const auto j = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(R) * alpha * (1.0 - alpha))));
  const Index lo = std::clamp<Index>(k - j, 1, R);
  const Index hi = std::clamp<Index>(k + j, 1, R);
  return 0.5 * (sorted[static_cast<std::size_t>(hi - 1)] - sorted[static_cast<std::size_t>(lo - 1)]);
}

}  // namespace detail

/// Rejection frequencies under H0 for every selected test.
inline std::vector<LevelRow> level_experiment(const SimulationConfig& c) {
  c.validate();
  const auto setup = detail::level_setup(c);
  const StatisticEngine engine(setup.X, setup.h, c.tau);
  std::optional<detail::Calibrated> s, ranks;
  if (c.has(TestKind::infty_s)) s = detail::calibrate(engine, c, false);
  if (c.has(TestKind::infty_ranks)) ranks = detail::calibrate(engine, c, true);
  const Vector mean = setup.X * setup.beta;
  const NoiseSampler noise(c.noise, c.tau);
  const auto outcomes = detail::replicate(
      c, engine, s ? &*s : nullptr, ranks ? &*ranks : nullptr, setup.X, setup.h, [&](long r) {
        RandomStream rs({c.seed, detail::kLevelStudy, static_cast<std::uint64_t>(r)});
        return Vector(mean + noise.draw(rs, c.n));
      });
  std::vector<LevelRow> rows;
  const double df = c.noise.family == NoiseSpec::Family::student ? c.noise.df : 0.0;
  for (const auto& [k, t] : detail::tallies(c, outcomes)) rows.push_back({k, df, t});
  return rows;
}

/// Level study repeated over Student error degrees of freedom. The design,
/// beta and null distributions are shared across df.
inline std::vector<LevelRow> robustness(const SimulationConfig& c, const std::vector<double>& dfs) {
  c.validate();
  if (dfs.empty()) throw InvalidArgument("no degrees of freedom given");
  const auto setup = detail::level_setup(c);
  const StatisticEngine engine(setup.X, setup.h, c.tau);
  std::optional<detail::Calibrated> s, ranks;
  if (c.has(TestKind::infty_s)) s = detail::calibrate(engine, c, false);
  if (c.has(TestKind::infty_ranks)) ranks = detail::calibrate(engine, c, true);
  const Vector mean = setup.X * setup.beta;
  std::vector<LevelRow> rows;
  for (double df : dfs) {
    SimulationConfig cd = c;
    cd.noise = NoiseSpec::student(df, c.noise.scale);
    const NoiseSampler noise(cd.noise, c.tau);
    const auto outcomes = detail::replicate(
        cd, engine, s ? &*s : nullptr, ranks ? &*ranks : nullptr, setup.X, setup.h, [&](long r) {
          RandomStream rs({c.seed, detail::kLevelStudy, static_cast<std::uint64_t>(r)});
          return Vector(mean + noise.draw(rs, c.n));
        });
    for (const auto& [k, t] : detail::tallies(cd, outcomes)) rows.push_back({k, df, t});
  }
  return rows;
}

/// Two-sample shift: u ~ noise, v ~ delta + noise, n per group.
inline std::vector<PowerRow> power_curve(const SimulationConfig& c) {
  c.validate();
  const Design d = unpaired_design(Vector::Zero(c.n), Vector::Zero(c.n));
  const Matrix& X = d.problem.X();
  const StatisticEngine engine(X, d.hypothesis, c.tau);
  std::optional<detail::Calibrated> s, ranks;
  if (c.has(TestKind::infty_s)) s = detail::calibrate(engine, c, false);
  if (c.has(TestKind::infty_ranks)) ranks = detail::calibrate(engine, c, true);
  const NoiseSampler noise(c.noise, c.tau);
  std::vector<PowerRow> rows;
  std::vector<std::vector<std::pair<TestKind, Tally>>> per_delta;
  for (double delta : c.delta_grid) {
    const auto outcomes = detail::replicate(
        c, engine, s ? &*s : nullptr, ranks ? &*ranks : nullptr, X, d.hypothesis, [&](long r) {
          RandomStream rs({c.seed, detail::kPowerStudy, static_cast<std::uint64_t>(r)});
          Vector y = noise.draw(rs, 2 * c.n);
          y.tail(c.n).array() += delta;
          return y;
        });
    per_delta.push_back(detail::tallies(c, outcomes));
  }
  for (TestKind k : c.tests)
    for (std::size_t g = 0; g < c.delta_grid.size(); ++g)
      for (const auto& [kind, t] : per_delta[g])
        if (kind == k) rows.push_back({k, c.delta_grid[g], t});
  return rows;
}

/// Unrescaled vs homopower-rescaled sup-norm test for A = [C, 0], b = 0,
/// under beta = delta e_1 and beta = delta e_2.
inline HomopowerResult homopower_experiment(const SimulationConfig& c, const Matrix& C) {
  c.validate();
  const Index m = C.rows();
  if (C.cols() != m || m < 1 || m >= c.p) throw InvalidArgument("C must be square with 1 <= m < p");
  if (m < 2) throw InvalidArgument("the homopower comparison needs m >= 2");
  RandomStream design_rs({c.seed, detail::kDesignStream, detail::kHomopowerStudy});
  const Matrix X = detail::draw_matrix(c.design_noise, c.n, c.p, design_rs);
  Matrix A = Matrix::Zero(m, c.p);
  A.leftCols(m) = C;
  const LinearHypothesis h(A, Vector::Zero(m));

  HomopowerResult res;
  const StatisticEngine plain(X, h, c.tau);
  const auto base = detail::score_columns(plain, c.mc_runs, homopower_seed(c.seed),
                                          detail::kHomopowerStream, c.calibration, c.threads);
  res.diag = detail::diag_from_columns(base, c.alpha);
  const LinearHypothesis hr = h.rescaled(res.diag);
  const StatisticEngine rescaled(X, hr, c.tau);

  // self-consistency: fresh marginal quantiles of the rescaled scores. Both
  // the fresh quantile and d are Monte Carlo estimates, so the standard
  // error of their ratio combines the two.
  {
    const std::uint64_t check_seed = stream_key({c.seed, detail::kRequantileStream});
    const auto fresh = detail::score_columns(rescaled, c.mc_runs, check_seed, detail::kNullStream,
                                             c.calibration, c.threads);
    res.requantiles.resize(m);
    res.requantile_se.resize(m);
    for (Index k = 0; k < m; ++k) {
      const auto& col = fresh[static_cast<std::size_t>(k)];
      res.requantiles(k) = detail::upper_quantile(col, c.alpha);
      const double se_fresh = detail::quantile_standard_error(col, c.alpha);
      const double se_diag = detail::quantile_standard_error(base[static_cast<std::size_t>(k)], c.alpha) / res.diag(k);
      res.requantile_se(k) = std::hypot(se_fresh, res.requantiles(k) * se_diag);
    }
  }

  const double c_plain = critical_value(sample_null(plain, c.mc_runs, c.seed, c.calibration, false, c.threads), c.alpha);
  const double c_rescaled =
      critical_value(sample_null(rescaled, c.mc_runs, c.seed, c.calibration, false, c.threads), c.alpha);
  const NoiseSampler noise(c.noise, c.tau);

  for (int variant = 0; variant < 2; ++variant) {
    const StatisticEngine& engine = variant ? rescaled : plain;
    const double crit = variant ? c_rescaled : c_plain;
    for (int alt = 1; alt <= 2; ++alt) {
      for (double delta : c.delta_grid) {
        struct Out {
          bool failed = false, reject = false, first = false;
        };
        std::vector<Out> out(static_cast<std::size_t>(c.reps));
        const Vector signal = delta * X.col(alt - 1);
        parallel_for(c.reps, c.threads, [&](long r) {
          RandomStream rs({c.seed, detail::kHomopowerStudy, static_cast<std::uint64_t>(r)});
          const Vector y = signal + noise.draw(rs, c.n);
          Out& o = out[static_cast<std::size_t>(r)];
          try {
            const auto v = engine.evaluate(y);
            o.reject = exceeds(v.plain, crit);
            Index arg = 0;
            v.scores.maxCoeff(&arg);
            o.first = arg == 0;
          } catch (const NumericalError&) {
            o.failed = true;
          }
        });
        HomopowerRow row;
        row.rescaled = variant == 1;
        row.alternative = alt;
        row.delta = delta;
        Index first = 0;
        for (const auto& o : out) {
          detail::add(row.tally, o.failed, o.reject);
          first += !o.failed && o.first;
        }
        row.argmax_first = row.tally.total ? static_cast<double>(first) / static_cast<double>(row.tally.total) : 0.0;
        res.rows.push_back(row);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// CSV output

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline void write_level_csv(std::ostream& os, const std::vector<LevelRow>& rows, bool with_df) {
  os << (with_df ? "df," : "") << "test,level,se,reps,failures\n";
  for (const auto& r : rows) {
    if (with_df) os << format_double(r.df) << ',';
    os << to_string(r.test) << ',' << format_double(r.tally.rate()) << ','
       << format_double(r.tally.standard_error()) << ',' << r.tally.total << ',' << r.tally.failures << '\n';
  }
}

inline void write_power_csv(std::ostream& os, const std::vector<PowerRow>& rows) {
  os << "test,delta,power,se,reps,failures\n";
  for (const auto& r : rows)
    os << to_string(r.test) << ',' << format_double(r.delta) << ',' << format_double(r.tally.rate()) << ','
       << format_double(r.tally.standard_error()) << ',' << r.tally.total << ',' << r.tally.failures << '\n';
}

inline void write_homopower_csv(std::ostream& os, const HomopowerResult& res) {
  os << "variant,alternative,delta,power,se,argmax_first,reps,failures\n";
  for (const auto& r : res.rows)
    os << (r.rescaled ? "rescaled" : "unrescaled") << ",H1" << r.alternative << ','
       << format_double(r.delta) << ',' << format_double(r.tally.rate()) << ','
       << format_double(r.tally.standard_error()) << ',' << format_double(r.argmax_first) << ','
       << r.tally.total << ',' << r.tally.failures << '\n';
}

}  // namespace qsign
