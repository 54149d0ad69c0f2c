#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qsign/experiments.hpp"
#include "test_support.hpp"

using namespace qsign;
using Catch::Approx;

namespace {

std::string level_csv(const SimulationConfig& c) {
  std::ostringstream os;
  write_level_csv(os, level_experiment(c), false);
  return os.str();
}

// every line has the header's column count
void check_csv_shape(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  REQUIRE(std::getline(is, line));
  const auto cols = std::count(line.begin(), line.end(), ',');
  int rows = 0;
  while (std::getline(is, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == cols);
    ++rows;
  }
  CHECK(rows > 0);
}

SimulationConfig small_regression() {
  auto c = robustness_setting(3.0);
  c.n = 40;
  c.p = 6;
  c.m = 2;
  c.reps = 300;
  c.mc_runs = 300;
  c.alpha = 0.1;
  return c;
}

}  // namespace

TEST_CASE("noise is centred at the requested quantile", "[experiments]") {
  CHECK(NoiseSampler(NoiseSpec::gaussian(), 0.5).shift() == 0.0);
  CHECK(NoiseSampler(NoiseSpec::student(3.0), 0.5).shift() == 0.0);
  CHECK(NoiseSampler(NoiseSpec::gaussian(2.0), 0.1).shift() == Approx(2.0 * -1.2815515655446004));

  const NoiseSampler s(NoiseSpec::gaussian(), 0.1);
  RandomStream rs{41};
  std::vector<double> draws(1000000);
  for (auto& d : draws) d = s(rs);
  std::nth_element(draws.begin(), draws.begin() + 100000, draws.end());
  CHECK(std::abs(draws[100000]) < 0.005);

  const NoiseSampler t(NoiseSpec::student(3.0, 0.5), 0.25);
  std::size_t below = 0;
  for (int i = 0; i < 200000; ++i) below += t(rs) < 0.0;
  CHECK(std::abs(static_cast<double>(below) / 200000 - 0.25) < 0.005);

  CHECK_THROWS_AS(NoiseSpec::student(0.5).validate(), InvalidArgument);
  CHECK_THROWS_AS(NoiseSpec::gaussian(0.0).validate(), InvalidArgument);
  CHECK(NoiseSpec::student(3.0).describe() == "student:3");
  CHECK(NoiseSpec::student(2.5).describe() == "student:2.5");
}

TEST_CASE("configs are validated", "[experiments]") {
  auto c = small_regression();
  c.reps = 50;
  CHECK_THROWS_AS(level_experiment(c), InvalidArgument);
  c = small_regression();
  c.mc_runs = 99;
  CHECK_THROWS_AS(level_experiment(c), InvalidArgument);
  c = small_regression();
  c.delta_grid.clear();
  CHECK_THROWS_AS(power_curve(c), InvalidArgument);
  c = small_regression();
  c.m = c.p;
  CHECK_THROWS_AS(level_experiment(c), InvalidArgument);
  CHECK(parse_test_kind("infty-ranks") == TestKind::infty_ranks);
  CHECK_THROWS_AS(parse_test_kind("chi2"), InvalidArgument);
  CHECK(two_sample_setting().delta_grid.size() == 21);
  CHECK(two_sample_setting().delta_grid.back() == Approx(2.0));
  CHECK(small_regression().full_scale().reps == 10000);
}

TEST_CASE("tables are reproducible and thread independent", "[experiments]") {
  auto c = small_regression();
  c.threads = 1;
  const std::string a = level_csv(c);
  c.threads = 3;
  CHECK(level_csv(c) == a);
  c.seed = 1;
  CHECK(level_csv(c) != a);
  check_csv_shape(a);
}

TEST_CASE("level near alpha for a median split", "[experiments]") {
  auto c = small_regression();
  c.alpha = 0.5;
  c.reps = 1000;
  c.mc_runs = 1000;
  c.tests = {TestKind::infty_s, TestKind::infty_ranks};
  for (const auto& row : level_experiment(c)) {
    INFO(to_string(row.test));
    CHECK(row.tally.total == 1000);
    CHECK(row.tally.rate() >= 0.45);
    CHECK(row.tally.rate() <= 0.55);
  }
}

TEST_CASE("levels at tau and 1 - tau agree under symmetric noise", "[experiments]") {
  auto c = small_regression();
  c.noise = NoiseSpec::gaussian();
  c.reps = 600;
  c.tau = 0.3;
  const auto lo = level_experiment(c).front().tally;
  c.tau = 0.7;
  const auto hi = level_experiment(c).front().tally;
  const double pooled = 0.5 * (lo.rate() + hi.rate());
  const double se = std::sqrt(pooled * (1 - pooled) * (1.0 / lo.total + 1.0 / hi.total));
  CHECK(std::abs(lo.rate() - hi.rate()) <= 3 * se + 1e-12);
}

TEST_CASE("robustness table has one row per df and test", "[experiments]") {
  auto c = small_regression();
  const auto rows = robustness(c, {1, 3, 100});
  CHECK(rows.size() == 6);
  CHECK(rows[0].df == 1.0);
  CHECK(rows[0].test == TestKind::infty_s);
  CHECK(rows[1].test == TestKind::f_test);
  CHECK(rows[5].df == 100.0);
  std::ostringstream os;
  write_level_csv(os, rows, true);
  check_csv_shape(os.str());
  CHECK(os.str().rfind("df,test,level,se,reps,failures\n", 0) == 0);
}

TEST_CASE("power curve is monotone and starts at the level", "[experiments]") {
  auto c = two_sample_setting(20);
  c.reps = 400;
  c.mc_runs = 1000;
  c.delta_grid = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};
  const auto rows = power_curve(c);
  REQUIRE(rows.size() == 21);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i % 7 == 0) {
      CHECK(rows[i].delta == 0.0);
      CHECK(rows[i].tally.rate() <= 0.05 + 3 * std::sqrt(0.05 * 0.95 / 400));
      continue;
    }
    CHECK(rows[i].test == rows[i - 1].test);
    CHECK(rows[i].tally.rate() >= rows[i - 1].tally.rate() - 0.03);
  }
  for (std::size_t i = 6; i < rows.size(); i += 7) CHECK(rows[i].tally.rate() > 0.8);
  std::ostringstream os;
  write_power_csv(os, rows);
  check_csv_shape(os.str());
}

TEST_CASE("homopower experiment at small scale", "[experiments]") {
  auto c = homopower_setting();
  c.n = 60;
  c.p = 8;
  c.reps = 300;
  c.mc_runs = 600;
  c.delta_grid = {0.0, 0.6};
  Matrix C(2, 2);
  C << 3, 0, 0, 1;
  const auto res = homopower_experiment(c, C);
  REQUIRE(res.rows.size() == 8);
  CHECK(res.diag(0) / res.diag(1) == Approx(1.0 / 3).margin(0.1));
  for (Index k = 0; k < 2; ++k) CHECK(std::abs(res.requantiles(k) - 1.0) <= 4 * res.requantile_se(k));
  for (const auto& r : res.rows)
    if (r.delta == 0.0) CHECK(r.tally.rate() <= 0.05 + 3 * std::sqrt(0.05 * 0.95 / 300));
  // unrescaled: entry 1 is drowned by the factor 3
  CHECK(res.rows[1].tally.rate() < res.rows[3].tally.rate());
  std::ostringstream os;
  write_homopower_csv(os, res);
  check_csv_shape(os.str());

  Matrix bad(1, 1);
  bad << 1;
  CHECK_THROWS_AS(homopower_experiment(c, bad), InvalidArgument);
}

TEST_CASE("shortest round-trip formatting", "[experiments]") {
  CHECK(format_double(0.05) == "0.05");
  CHECK(format_double(2.0) == "2");
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}
