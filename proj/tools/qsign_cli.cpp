// qsign: command-line front end.
//
//   qsign test      sign test of A beta = b, JSON report
//   qsign path      affine quantile LASSO path, CSV
//   qsign simulate  simulation studies, CSV
//   qsign ci        test-inversion confidence interval, JSON report
//   qsign replay    re-run the command recorded in a report's manifest
//
// Exit status: 0 success (whatever the decision), 2 usage or input error,
// 3 numerical failure.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qsign/qsign.hpp"

#ifndef QSIGN_VERSION
#define QSIGN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

/// Input problems that should come with the usage text.
class UsageError : public qsign::InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw qsign::InvalidArgument("cannot open '" + path + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string fmt(double x) { return qsign::format_double(x); }

json to_json(const qsign::Vector& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

qsign::NoiseSpec parse_noise(const std::string& s) {
  if (s == "gaussian") return qsign::NoiseSpec::gaussian();
  const std::string prefix = "student:";
  if (s.rfind(prefix, 0) == 0) {
    double df = 0.0;
    try {
      std::size_t used = 0;
      df = std::stod(s.substr(prefix.size()), &used);
      if (used != s.size() - prefix.size()) df = 0.0;
    } catch (const std::exception&) {
    }
    if (!(df >= 1.0)) throw qsign::InvalidArgument("student noise needs df >= 1, got '" + s + "'");
    return qsign::NoiseSpec::student(df);
  }
  throw qsign::InvalidArgument("unknown noise '" + s + "' (expected gaussian or student:DF)");
}

/// Everything needed to describe and replay one run.
struct Run {
  std::string command;
  std::vector<std::string> arguments;  // canonical, absolute paths, no output flags
  json options = json::object();
  json inputs = json::object();
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void arg(const std::string& flag, const std::string& value) {
    arguments.push_back(flag);
    arguments.push_back(value);
  }
  void flag(const std::string& f) { arguments.push_back(f); }

  std::string input(const std::string& name, const std::string& path) {
    const std::string abs = fs::absolute(path).lexically_normal().string();
    inputs[name] = {{"path", abs}, {"sha256", sha256_file(abs)}};
    return abs;
  }

  json manifest() const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json a = json::array();
    for (const auto& s : arguments) a.push_back(s);
    return {{"command", command}, {"version", QSIGN_VERSION}, {"seed", seed},   {"options", options},
            {"inputs", inputs},   {"arguments", a},          {"duration_seconds", secs}};
  }
};

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw qsign::InvalidArgument("cannot write '" + out + "'");
  f << text;
}

void emit_json(const json& j, const std::string& out) { emit(j.dump(2) + "\n", out); }

// ---------------------------------------------------------------------------
// data flags shared by test, path and ci

struct DataFlags {
  std::string design;
  std::string y, x, a, b, u, v;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool hypothesis) {
  cmd->add_option("--design", f.design, "Built-in design instead of --x/--a/--b")
      ->check(CLI::IsMember({"paired", "unpaired", "tv"}));
  cmd->add_option("--y", f.y, "Response vector (one value per line); series for --design tv");
  cmd->add_option("--x", f.x, "Design matrix, headerless CSV");
  if (hypothesis) {
    cmd->add_option("--a", f.a, "Hypothesis matrix A, headerless CSV");
    cmd->add_option("--b", f.b, "Hypothesis right-hand side b (default 0)");
  }
  cmd->add_option("--u", f.u, "First sample (--design paired|unpaired)");
  cmd->add_option("--v", f.v, "Second sample (--design paired|unpaired)");
}

qsign::Design load_design(const DataFlags& f, double tau, bool hypothesis, Run& run) {
  auto need = [](const std::string& value, const char* flag, const std::string& why) {
    if (value.empty()) throw UsageError(std::string("missing ") + flag + " " + why);
  };
  if (f.design == "paired" || f.design == "unpaired") {
    need(f.u, "--u", "for --design " + f.design);
    need(f.v, "--v", "for --design " + f.design);
    run.arg("--design", f.design);
    run.arg("--u", run.input("u", f.u));
    run.arg("--v", run.input("v", f.v));
    const auto u = qsign::read_csv_vector(f.u);
    const auto v = qsign::read_csv_vector(f.v);
    return f.design == "paired" ? qsign::paired_design({u, v}) : qsign::unpaired_design(u, v);
  }
  if (f.design == "tv") {
    need(f.y, "--y", "for --design tv");
    run.arg("--design", "tv");
    run.arg("--y", run.input("y", f.y));
    return qsign::tv_design({qsign::read_csv_vector(f.y), tau});
  }
  need(f.y, "--y", "(or --design)");
  need(f.x, "--x", "(or --design)");
  run.arg("--y", run.input("y", f.y));
  run.arg("--x", run.input("x", f.x));
  const qsign::Vector y = qsign::read_csv_vector(f.y);
  const qsign::Matrix X = qsign::read_csv_matrix(f.x);
  if (X.rows() != y.size())
    throw qsign::DimensionError("--x has " + std::to_string(X.rows()) + " rows but --y has " +
                                std::to_string(y.size()) + " values");
  qsign::RegressionProblem problem(y, X);
  if (!hypothesis) {
    // placeholder hypothesis on the first coefficient; callers replace it
    qsign::Matrix A = qsign::Matrix::Zero(1, X.cols());
    A(0, 0) = 1.0;
    return {problem, qsign::LinearHypothesis(A, qsign::Vector::Zero(1)), {}};
  }
  need(f.a, "--a", "(or --design)");
  run.arg("--a", run.input("a", f.a));
  const qsign::Matrix A = qsign::read_csv_matrix(f.a);
  if (A.cols() != X.cols())
    throw qsign::DimensionError("--a has " + std::to_string(A.cols()) + " columns but --x has " +
                                std::to_string(X.cols()));
  qsign::Vector b = qsign::Vector::Zero(A.rows());
  if (!f.b.empty()) {
    run.arg("--b", run.input("b", f.b));
    b = qsign::read_csv_vector(f.b);
    if (b.size() != A.rows())
      throw qsign::DimensionError("--b has " + std::to_string(b.size()) + " values but --a has " +
                                  std::to_string(A.rows()) + " rows");
  }
  return {problem, qsign::LinearHypothesis(A, b), {}};
}

// ---------------------------------------------------------------------------
// options shared by test and ci

struct TestFlags {
  double tau = 0.5;
  double alpha = 0.05;
  long mc_runs = 10000;
  std::uint64_t seed = 0;
  bool rank_weighted = false;
  bool homopower = false;
  std::string dual_norm = "inf";
  std::string noise = "gaussian";
};

void add_test_flags(CLI::App* cmd, TestFlags& t, bool test_only) {
  cmd->add_option("--tau", t.tau, "Quantile level")->capture_default_str();
  cmd->add_option("--alpha", t.alpha, "Test level")->capture_default_str();
  cmd->add_option("--mc-runs", t.mc_runs, "Monte Carlo null samples")->capture_default_str();
  cmd->add_option("--seed", t.seed, "Random seed")->capture_default_str();
  cmd->add_flag("--rank-weighted", t.rank_weighted, "Rank-weighted statistic");
  cmd->add_option("--dual-norm", t.dual_norm, "Norm of the score vector: inf or an exponent such as 2")
      ->capture_default_str();
  cmd->add_option("--noise", t.noise, "Null calibration noise: gaussian or student:DF")->capture_default_str();
  if (test_only) cmd->add_flag("--homopower", t.homopower, "Apply homopower rescaling");
}

qsign::TestOptions resolve(const TestFlags& t, unsigned threads, Run& run) {
  (void)qsign::QuantileLevel(t.tau);
  if (!(t.alpha > 0.0 && t.alpha < 1.0)) throw qsign::InvalidArgument("--alpha must lie in (0, 1)");
  if (t.mc_runs < 100) throw qsign::InvalidArgument("--mc-runs must be at least 100");
  qsign::TestOptions o;
  o.mc_runs = t.mc_runs;
  o.seed = t.seed;
  o.noise = parse_noise(t.noise);
  o.rank_weighted = t.rank_weighted;
  o.homopower = t.homopower;
  o.dual_norm = qsign::DualNorm::parse(t.dual_norm);
  o.threads = threads;
  run.seed = t.seed;
  run.arg("--tau", fmt(t.tau));
  run.arg("--alpha", fmt(t.alpha));
  run.arg("--mc-runs", std::to_string(t.mc_runs));
  run.arg("--seed", std::to_string(t.seed));
  run.arg("--dual-norm", o.dual_norm.describe());
  run.arg("--noise", o.noise.describe());
  if (t.rank_weighted) run.flag("--rank-weighted");
  if (t.homopower) run.flag("--homopower");
  run.options.update({{"tau", t.tau},
                      {"alpha", t.alpha},
                      {"mc_runs", t.mc_runs},
                      {"seed", t.seed},
                      {"rank_weighted", t.rank_weighted},
                      {"homopower", t.homopower},
                      {"dual_norm", o.dual_norm.describe()},
                      {"noise", o.noise.describe()}});
  return o;
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "qsign: warning: " << w << '\n';
}

// ---------------------------------------------------------------------------
// commands

struct Common {
  std::string out;
  unsigned threads = 0;
};

void cmd_test(const DataFlags& data, const TestFlags& flags, const Common& common, const std::string& null_out) {
  Run run;
  run.command = "test";
  run.arguments.push_back("test");
  const qsign::Design d = load_design(data, flags.tau, true, run);
  const qsign::TestOptions o = resolve(flags, common.threads, run);
  warn(d.warnings);
  const auto rep = qsign::run_test(d.problem, d.hypothesis, qsign::QuantileLevel(flags.tau), flags.alpha, o);
  json j = {{"command", "test"},
            {"statistic", rep.statistic},
            {"critical_value", rep.critical_value},
            {"p_value", rep.p_value},
            {"reject", rep.reject},
            {"tau", rep.tau},
            {"alpha", rep.alpha},
            {"mc_runs", rep.R},
            {"seed", rep.seed},
            {"dual_norm", rep.dual_norm},
            {"rank_weighted", rep.rank_weighted},
            {"homopower_diag", rep.homopower_diag ? to_json(*rep.homopower_diag) : json(nullptr)},
            {"degenerate_dual", rep.degenerate_dual},
            {"failures", rep.failures},
            {"warnings", d.warnings}};
  if (!null_out.empty()) {
    std::ostringstream csv;
    csv << "sample\n";
    for (double s : rep.null.samples) csv << fmt(s) << '\n';
    emit(csv.str(), null_out);
  }
  j["manifest"] = run.manifest();
  emit_json(j, common.out);
}

void cmd_ci(const DataFlags& data, const TestFlags& flags, const Common& common, long j1,
            std::optional<double> lower, std::optional<double> upper, double tolerance) {
  Run run;
  run.command = "ci";
  run.arguments.push_back("ci");
  qsign::Design d = load_design(data, flags.tau, false, run);
  const qsign::TestOptions o = resolve(flags, common.threads, run);
  if (j1 < 1 || j1 > d.problem.p())
    throw qsign::InvalidArgument("--j " + std::to_string(j1) + " outside 1.." + std::to_string(d.problem.p()));
  run.arg("--j", std::to_string(j1));
  run.options["j"] = j1;
  qsign::IntervalSearch search;
  search.lower_bound = lower;
  search.upper_bound = upper;
  search.tolerance = tolerance;
  if (lower) run.arg("--lower", fmt(*lower));
  if (upper) run.arg("--upper", fmt(*upper));
  if (tolerance > 0.0) run.arg("--tolerance", fmt(tolerance));
  run.options["lower"] = lower ? json(*lower) : json(nullptr);
  run.options["upper"] = upper ? json(*upper) : json(nullptr);
  run.options["tolerance"] = tolerance;
  warn(d.warnings);
  const auto ci = qsign::confidence_interval(d.problem, j1 - 1, qsign::QuantileLevel(flags.tau), flags.alpha, search, o);
  json j = {{"command", "ci"},
            {"coefficient", j1},
            {"lo", ci.lo},
            {"hi", ci.hi},
            {"alpha", ci.alpha},
            {"tau", flags.tau},
            {"center", ci.center},
            {"critical_value", ci.critical_value},
            {"non_interval", ci.non_interval},
            {"lower_open", ci.lower_open},
            {"upper_open", ci.upper_open},
            {"manifest", run.manifest()}};
  emit_json(j, common.out);
}

struct PathFlags {
  std::optional<double> lambda_max;
  int lambda_steps = 41;
  std::string manifest;
};

void cmd_path(const DataFlags& data, const TestFlags& flags, const PathFlags& pf, const Common& common) {
  Run run;
  run.command = "path";
  run.arguments.push_back("path");
  const qsign::Design d = load_design(data, flags.tau, true, run);
  const qsign::TestOptions o = resolve(flags, common.threads, run);
  if (pf.lambda_steps < 2) throw qsign::InvalidArgument("--lambda-steps must be at least 2");
  run.arg("--lambda-steps", std::to_string(pf.lambda_steps));
  if (pf.lambda_max) run.arg("--lambda-max", fmt(*pf.lambda_max));
  warn(d.warnings);

  const qsign::QuantileLevel tau(flags.tau);
  const qsign::StatisticEngine engine(d.problem.X(), d.hypothesis, tau, o.dual_norm, o.scale, o.solver);
  const double S = engine.statistic(d.problem.y(), false);
  const auto null = qsign::sample_null(engine, o.mc_runs, o.seed, o.noise, false, o.threads);
  const double c_alpha = qsign::critical_value(null, flags.alpha);
  double upper = pf.lambda_max.value_or(2.0 * std::max(S, c_alpha));
  if (!(upper > 0.0)) upper = 1.0;
  const auto rows = qsign::lasso_path(d.problem, d.hypothesis, tau, qsign::lambda_grid(upper, pf.lambda_steps), c_alpha);

  std::ostringstream csv;
  csv << "lambda,penalty_norm,marker";
  for (qsign::Index k = 0; k < d.problem.p(); ++k) csv << ",beta_" << k + 1;
  csv << '\n';
  for (const auto& r : rows) {
    csv << fmt(r.lambda) << ',' << fmt(r.penalty_norm) << ',' << (r.marker ? "c_alpha" : "");
    for (double b : r.beta) csv << ',' << fmt(b);
    csv << '\n';
  }
  emit(csv.str(), common.out);
  if (!pf.manifest.empty()) {
    run.options.update({{"lambda_steps", pf.lambda_steps},
                        {"lambda_max", pf.lambda_max ? json(*pf.lambda_max) : json(nullptr)},
                        {"statistic", S},
                        {"critical_value", c_alpha}});
    emit_json(run.manifest(), pf.manifest);
  }
}

struct SimFlags {
  std::string experiment;
  std::optional<long> n, p, m, reps, mc_runs;
  std::optional<double> tau, alpha;
  std::uint64_t seed = 0;
  std::vector<double> df;
  std::vector<double> delta_grid;
  std::vector<double> c_diag{3.0, 1.0};
  std::vector<std::string> tests;
  std::string noise, design_noise;
  bool full_scale = false;
  std::string manifest;
};

void cmd_simulate(const SimFlags& s, const Common& common) {
  Run run;
  run.command = "simulate";
  run.arguments = {"simulate", "--experiment", s.experiment};
  qsign::SimulationConfig c;
  if (s.experiment == "level" || s.experiment == "robustness") c = qsign::robustness_setting(3.0);
  else if (s.experiment == "power") c = qsign::two_sample_setting(100);
  else c = qsign::homopower_setting();
  if (s.full_scale) c = c.full_scale();
  if (s.n) c.n = *s.n;
  if (s.p) c.p = *s.p;
  if (s.m) c.m = *s.m;
  if (s.reps) c.reps = *s.reps;
  if (s.mc_runs) c.mc_runs = *s.mc_runs;
  if (s.tau) c.tau = *s.tau;
  if (s.alpha) c.alpha = *s.alpha;
  c.seed = s.seed;
  c.threads = common.threads;
  std::vector<double> dfs = s.df;
  if (s.experiment == "robustness" && dfs.empty()) dfs = {1, 2, 3, 4, 5, 10, 100};
  if (s.experiment != "robustness" && !dfs.empty()) {
    if (dfs.size() != 1) throw qsign::InvalidArgument("--df takes a single value for --experiment " + s.experiment);
    c.noise = qsign::NoiseSpec::student(dfs.front());
  }
  if (!s.noise.empty()) c.noise = parse_noise(s.noise);
  if (!s.design_noise.empty()) c.design_noise = parse_noise(s.design_noise);
  if (!s.delta_grid.empty()) c.delta_grid = s.delta_grid;
  if (!s.tests.empty()) {
    c.tests.clear();
    for (const auto& t : s.tests) c.tests.push_back(qsign::parse_test_kind(t));
  }
  for (double df : dfs)
    if (!(df >= 1.0)) throw qsign::InvalidArgument("--df values must be >= 1");

  // canonical, fully resolved arguments
  auto list = [](const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
  };
  std::string tests;
  for (std::size_t i = 0; i < c.tests.size(); ++i) tests += (i ? "," : "") + std::string(qsign::to_string(c.tests[i]));
  run.seed = c.seed;
  run.arg("--n", std::to_string(c.n));
  run.arg("--p", std::to_string(c.p));
  run.arg("--m", std::to_string(c.m));
  run.arg("--tau", fmt(c.tau));
  run.arg("--alpha", fmt(c.alpha));
  run.arg("--reps", std::to_string(c.reps));
  run.arg("--mc-runs", std::to_string(c.mc_runs));
  run.arg("--seed", std::to_string(c.seed));
  run.arg("--noise", c.noise.describe());
  run.arg("--design-noise", c.design_noise.describe());
  run.arg("--delta-grid", list(c.delta_grid));
  run.arg("--tests", tests);
  if (s.experiment == "robustness") run.arg("--df", list(dfs));
  if (s.experiment == "homopower") run.arg("--c", list(s.c_diag));
  run.options = {{"experiment", s.experiment}, {"n", c.n},       {"p", c.p},
                 {"m", c.m},                   {"tau", c.tau},   {"alpha", c.alpha},
                 {"reps", c.reps},             {"mc_runs", c.mc_runs}, {"seed", c.seed},
                 {"noise", c.noise.describe()}, {"design_noise", c.design_noise.describe()},
                 {"delta_grid", c.delta_grid}, {"tests", tests}};

  std::ostringstream csv;
  if (s.experiment == "level") {
    qsign::write_level_csv(csv, qsign::level_experiment(c), false);
  } else if (s.experiment == "robustness") {
    run.options["df"] = dfs;
    qsign::write_level_csv(csv, qsign::robustness(c, dfs), true);
  } else if (s.experiment == "power") {
    qsign::write_power_csv(csv, qsign::power_curve(c));
  } else {
    const auto k = static_cast<qsign::Index>(s.c_diag.size());
    qsign::Vector diag(k);
    for (qsign::Index i = 0; i < k; ++i) diag(i) = s.c_diag[static_cast<std::size_t>(i)];
    c.m = k;
    run.options["c"] = s.c_diag;
    const auto res = qsign::homopower_experiment(c, diag.asDiagonal().toDenseMatrix());
    qsign::write_homopower_csv(csv, res);
    std::cerr << "qsign: homopower diagonal " << res.diag.transpose() << "; rescaled quantiles "
              << res.requantiles.transpose() << " (se " << res.requantile_se.transpose() << ")\n";
  }
  emit(csv.str(), common.out);
  if (!s.manifest.empty()) emit_json(run.manifest(), s.manifest);
}

int replay(const std::string& path, const Common& common, int (*dispatch)(std::vector<std::string>)) {
  std::ifstream in(path);
  if (!in) throw qsign::InvalidArgument("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw qsign::InvalidArgument(path + ": " + e.what());
  }
  const json& m = j.contains("manifest") ? j["manifest"] : j;
  if (!m.contains("arguments") || !m["arguments"].is_array())
    throw qsign::InvalidArgument(path + ": no manifest arguments");
  if (m.contains("version") && m["version"] != QSIGN_VERSION)
    std::cerr << "qsign: warning: manifest written by version " << m["version"].get<std::string>() << '\n';
  const json inputs = m.value("inputs", json::object());
  for (const auto& [name, input] : inputs.items()) {
    const std::string file = input.at("path").get<std::string>();
    if (sha256_file(file) != input.at("sha256").get<std::string>())
      throw qsign::InvalidArgument("input '" + name + "' (" + file + ") changed since the recorded run");
  }
  std::vector<std::string> args;
  for (const auto& a : m.at("arguments")) args.push_back(a.get<std::string>());
  if (!common.out.empty()) {
    args.push_back("--out");
    args.push_back(common.out);
  }
  if (common.threads) {
    args.push_back("--threads");
    args.push_back(std::to_string(common.threads));
  }
  return dispatch(std::move(args));
}

const char* kSimulateFooter = R"(CSV columns:
  level       test,level,se,reps,failures
  robustness  df,test,level,se,reps,failures
  power       test,delta,power,se,reps,failures
  homopower   variant,alternative,delta,power,se,argmax_first,reps,failures
se is the binomial Monte Carlo standard error sqrt(f (1 - f) / reps).)";

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Quantile sign tests for linear hypotheses"};
  app.name("qsign");
  app.set_version_flag("--version", QSIGN_VERSION);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", common.out, "Write the output here instead of standard output");
    cmd->add_option("--threads", common.threads, "Worker threads (default: QSIGN_THREADS or all cores)");
  };

  DataFlags data;
  TestFlags tflags;
  std::string null_out;
  auto* test = app.add_subcommand("test", "Test A beta = b; JSON report");
  add_data_flags(test, data, true);
  add_test_flags(test, tflags, true);
  test->add_option("--null-out", null_out, "Also write the sorted null samples as CSV");
  add_common(test);

  PathFlags pflags;
  auto* path = app.add_subcommand("path", "Affine quantile LASSO path; CSV (lambda, penalty norm, marker, beta)");
  add_data_flags(path, data, true);
  add_test_flags(path, tflags, false);
  path->add_option("--lambda-max", pflags.lambda_max, "Largest lambda (default 2 max(S, c_alpha))");
  path->add_option("--lambda-steps", pflags.lambda_steps, "Grid points on [0, lambda-max]")->capture_default_str();
  path->add_option("--manifest", pflags.manifest, "Write the run manifest as JSON");
  add_common(path);

  SimFlags sflags;
  auto* sim = app.add_subcommand("simulate", "Simulation studies; CSV");
  sim->add_option("--experiment", sflags.experiment, "Study to run")
      ->required()
      ->check(CLI::IsMember({"level", "power", "homopower", "robustness"}));
  sim->add_option("--n", sflags.n, "Observations (per group for power)");
  sim->add_option("--p", sflags.p, "Coefficients");
  sim->add_option("--m", sflags.m, "Hypothesis rows");
  sim->add_option("--tau", sflags.tau, "Quantile level");
  sim->add_option("--alpha", sflags.alpha, "Test level");
  sim->add_option("--reps", sflags.reps, "Datasets per grid point (default 2000)");
  sim->add_option("--mc-runs", sflags.mc_runs, "Null samples per test (default 2000)");
  sim->add_option("--seed", sflags.seed, "Random seed")->capture_default_str();
  sim->add_option("--df", sflags.df, "Student error df; a list for robustness")->delimiter(',');
  sim->add_option("--delta-grid", sflags.delta_grid, "Alternative shifts, comma separated")->delimiter(',');
  sim->add_option("--c", sflags.c_diag, "Diagonal of C for homopower")->delimiter(',')->capture_default_str();
  sim->add_option("--tests", sflags.tests, "Subset of infty-s,infty-ranks,f-test")->delimiter(',');
  sim->add_option("--noise", sflags.noise, "Data errors: gaussian or student:DF");
  sim->add_option("--design-noise", sflags.design_noise, "Design entries: gaussian or student:DF");
  sim->add_flag("--full-scale", sflags.full_scale, "10^4 datasets and 10^4 null samples (slow)");
  sim->add_option("--manifest", sflags.manifest, "Write the run manifest as JSON");
  sim->footer(kSimulateFooter);
  add_common(sim);

  long j1 = 0;
  std::optional<double> lower, upper;
  double tolerance = 0.0;
  auto* ci = app.add_subcommand("ci", "Confidence interval for beta_j by test inversion; JSON report");
  add_data_flags(ci, data, false);
  add_test_flags(ci, tflags, false);
  ci->add_option("--j", j1, "Coefficient index, 1-based")->required();
  ci->add_option("--lower", lower, "Lower search limit");
  ci->add_option("--upper", upper, "Upper search limit");
  ci->add_option("--tolerance", tolerance, "Bisection tolerance (default relative 1e-8)");
  add_common(ci);

  std::string manifest_path;
  auto* rep = app.add_subcommand("replay", "Re-run the command recorded in a report or manifest");
  rep->add_option("manifest", manifest_path, "JSON report or manifest")->required();
  add_common(rep);

  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
  CLI::App* active = &app;
  try {
    app.parse(args);
    if (test->parsed()) {
      active = test;
      cmd_test(data, tflags, common, null_out);
    } else if (path->parsed()) {
      active = path;
      cmd_path(data, tflags, pflags, common);
    } else if (sim->parsed()) {
      active = sim;
      cmd_simulate(sflags, common);
    } else if (ci->parsed()) {
      active = ci;
      cmd_ci(data, tflags, common, j1, lower, upper, tolerance);
    } else if (rep->parsed()) {
      active = rep;
      return replay(manifest_path, common, &dispatch);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "qsign: " << e.what() << "\n\n";
    CLI::App* sub = nullptr;
    for (CLI::App* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub : &app)->help();
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "qsign: " << e.what() << "\n\n" << active->help();
    return kExitUsage;
  } catch (const qsign::InvalidArgument& e) {
    std::cerr << "qsign: " << e.what() << '\n';
    return kExitUsage;
  } catch (const qsign::NumericalError& e) {
    std::cerr << "qsign: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const qsign::Error& e) {
    std::cerr << "qsign: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "qsign: " << e.what() << '\n';
    return 1;
  }
}
