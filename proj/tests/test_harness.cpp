#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "metaopt/baselines.hpp"
#include "metaopt/errors.hpp"
#include "metaopt/harness.hpp"
#include "metaopt/num.hpp"
#include "metaopt/policy.hpp"
#include "support/test_problems.hpp"

using namespace metaopt;
namespace fs = std::filesystem;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

bool same_mat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

test_support::QuadraticProblem easy_problem() {
  Eigen::VectorXd h(3), c(3);
  h << 1.0, 2.0, 0.5;
  c << 0.4, -0.3, 1.1;
  return test_support::QuadraticProblem(h, c, 0.5);
}

BaselineOptimizer sgd(double step) {
  BaselineConfig cfg;
  cfg.alg = BaselineAlg::sgd;
  cfg.step = step;
  return BaselineOptimizer(cfg);
}

// Starts far enough out that the very first objective value trips the
// harness divergence ceiling for the chosen seeds.
class FarStartProblem : public test_support::QuadraticProblem {
 public:
  FarStartProblem()
      : test_support::QuadraticProblem(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)) {}

  Eigen::VectorXd init_iterate(std::uint64_t seed) const override {
    Eigen::VectorXd x(1);
    x[0] = seed >= 100 ? 1e7 : 0.5 + 0.01 * static_cast<double>(seed);
    return x;
  }
};

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("metaopt_harness_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("a clean run records one row per iterate") {
  test_support::QuadraticProblem prob = easy_problem();
  BaselineOptimizer opt = sgd(0.25);
  RunRecord rec = run_algorithm(prob, opt, 9, 20);

  CHECK(rec.run_id == "sgd-s9");
  CHECK(rec.algorithm == "sgd");
  CHECK(rec.problem == "quadratic");
  CHECK(rec.seed == 9);
  CHECK_FALSE(rec.transfer);
  CHECK_FALSE(rec.diverged);
  REQUIRE(rec.true_objective.size() == 21);
  REQUIRE(rec.noisy_objective.size() == 21);
  REQUIRE(rec.wall_ms.size() == 21);

  // Noiseless problem: recorded noisy values equal the true curve, which
  // contracts monotonically at this step size.
  for (std::size_t t = 0; t < 21; ++t) {
    CHECK(rec.noisy_objective[t] == rec.true_objective[t]);
    if (t > 0) {
      CHECK(rec.true_objective[t] <= rec.true_objective[t - 1]);
      CHECK(rec.wall_ms[t] >= rec.wall_ms[t - 1]);
    }
  }

  double acc = 0.0;
  for (std::size_t t = 1; t < 21; ++t) acc += rec.true_objective[t];
  CHECK(rec.final_meta_loss == acc);
  CHECK(rec.minibatch_hash != 0);
}

TEST_CASE("a zero horizon run is a single evaluation") {
  test_support::QuadraticProblem prob = easy_problem();
  BaselineOptimizer opt = sgd(0.1);
  RunRecord rec = run_algorithm(prob, opt, 1, 0);
  CHECK(rec.true_objective.size() == 1);
  CHECK(rec.final_meta_loss == 0.0);
  CHECK_FALSE(rec.diverged);
  CHECK_THROWS_AS(run_algorithm(prob, opt, 1, -1), InvalidArgument);
}

TEST_CASE("reruns reproduce the same trajectory") {
  test_support::QuadraticProblem prob(Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(4), 0.1,
                                      0.05, 0.05, 3);
  BaselineOptimizer a = sgd(0.2);
  BaselineOptimizer b = sgd(0.2);
  RunRecord ra = run_algorithm(prob, a, 5, 30);
  RunRecord rb = run_algorithm(prob, b, 5, 30);
  CHECK(ra.true_objective == rb.true_objective);
  CHECK(ra.noisy_objective == rb.noisy_objective);
  CHECK(ra.final_meta_loss == rb.final_meta_loss);
  CHECK(ra.minibatch_hash == rb.minibatch_hash);
}

TEST_CASE("every optimizer sees the same minibatch stream") {
  test_support::QuadraticProblem prob(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2), 0.0,
                                      0.1, 0.1, 11);
  BaselineOptimizer s = sgd(0.1);
  BaselineConfig mc;
  mc.alg = BaselineAlg::momentum;
  mc.step = 0.05;
  BaselineOptimizer m(mc);

  RunRecord rs = run_algorithm(prob, s, 4, 25);
  RunRecord rm = run_algorithm(prob, m, 4, 25);
  RunRecord other_seed = run_algorithm(prob, s, 5, 25);
  CHECK(rs.minibatch_hash == rm.minibatch_hash);
  // The minibatch schedule is a property of the problem and step index only.
  CHECK(rs.minibatch_hash == other_seed.minibatch_hash);
}

TEST_CASE("value blowups mark the run diverged") {
  // Unstable step doubles the error each iteration until the objective
  // crosses the divergence ceiling mid-run.
  test_support::QuadraticProblem prob(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1));
  BaselineOptimizer opt = sgd(3.0);
  RunRecord rec = run_algorithm(prob, opt, 2, 200);
  CHECK(rec.diverged);
  CHECK(rec.true_objective.size() > 0);
  CHECK(rec.true_objective.size() < 201);
  CHECK(rec.final_meta_loss == kInf);

  // A first iterate past the ceiling leaves no recorded rows at all.
  FarStartProblem far;
  BaselineOptimizer opt2 = sgd(0.1);
  RunRecord bad = run_algorithm(far, opt2, 200, 10);
  CHECK(bad.diverged);
  CHECK(bad.true_objective.empty());
  CHECK(bad.final_meta_loss == kInf);
}

TEST_CASE("csv rows mirror the record bit for bit") {
  test_support::QuadraticProblem prob = easy_problem();
  BaselineOptimizer opt = sgd(0.25);
  RunRecord rec = run_algorithm(prob, opt, 2, 3);
  rec.transfer = true;

  std::ostringstream out;
  write_run_csv_header(out);
  append_run_csv(out, rec);
  const std::vector<std::string> rows = lines_of(out.str());
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] ==
        "run_id,algorithm,problem,seed,iteration,true_objective,noisy_objective,"
        "wall_ms,transfer");
  for (int t = 0; t < 4; ++t) {
    const std::vector<std::string> cells = split(rows[t + 1], ',');
    REQUIRE(cells.size() == 9);
    CHECK(cells[0] == "sgd-s2");
    CHECK(cells[1] == "sgd");
    CHECK(cells[2] == "quadratic");
    CHECK(cells[3] == "2");
    CHECK(cells[4] == std::to_string(t));
    CHECK(parse_double(cells[5], "true") == rec.true_objective[t]);
    CHECK(parse_double(cells[6], "noisy") == rec.noisy_objective[t]);
    CHECK(parse_double(cells[7], "wall") == rec.wall_ms[t]);
    CHECK(cells[8] == "true");
  }
}

TEST_CASE("comparison ranks algorithms by mean meta loss") {
  test_support::QuadraticProblem prob = easy_problem();
  CompareOptions opts;
  opts.algorithms = {"sgd", "momentum", "adam"};
  opts.seeds = {1, 2, 3};
  opts.horizon = 40;

  std::vector<RunRecord> records;
  CompareReport report = run_compare(prob, opts, &records);
  REQUIRE(report.entries.size() == 3);
  REQUIRE(records.size() == 9);

  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const AlgorithmStats& st = report.entries[i];
    CHECK(st.rank == static_cast<int>(i) + 1);
    CHECK(st.runs == 3);
    CHECK(st.diverged_runs == 0);
    CHECK(st.tuned_step > 0.0);
    REQUIRE(st.mean_curve.size() == 41);
    if (i > 0) {
      CHECK(report.entries[i - 1].meta_loss_mean <= st.meta_loss_mean);
    }

    // Recompute the stats from the raw records.
    double lm = 0.0, fm = 0.0;
    std::vector<double> curve(41, 0.0);
    int found = 0;
    for (const RunRecord& rec : records) {
      if (rec.algorithm != st.algorithm) continue;
      ++found;
      lm += rec.final_meta_loss;
      fm += rec.true_objective.back();
      for (int t = 0; t <= 40; ++t) curve[t] += rec.true_objective[t];
    }
    REQUIRE(found == 3);
    CHECK(st.meta_loss_mean == doctest::Approx(lm / 3).epsilon(1e-12));
    CHECK(st.final_obj_mean == doctest::Approx(fm / 3).epsilon(1e-12));
    for (int t = 0; t <= 40; ++t) {
      CHECK(st.mean_curve[t] == doctest::Approx(curve[t] / 3).epsilon(1e-12));
    }
  }

  // Every run of every algorithm consumed the identical minibatch stream.
  for (const RunRecord& rec : records) {
    CHECK(rec.minibatch_hash == records[0].minibatch_hash);
  }
}

TEST_CASE("diverged runs poison the mean and rank last by name on ties") {
  FarStartProblem prob;
  CompareOptions opts;
  opts.algorithms = {"sgd", "momentum"};
  opts.seeds = {1, 200};  // seed 200 starts past the ceiling for every algorithm
  opts.horizon = 10;

  CompareReport report = run_compare(prob, opts);
  REQUIRE(report.entries.size() == 2);
  for (const AlgorithmStats& st : report.entries) {
    CHECK(st.diverged_runs == 1);
    CHECK(st.meta_loss_mean == kInf);
    CHECK(std::isnan(st.meta_loss_sd));
    // Means over the surviving run are still reported.
    CHECK(std::isfinite(st.final_obj_mean));
    CHECK(std::isfinite(st.mean_curve[0]));
  }
  CHECK(report.entries[0].algorithm == "momentum");
  CHECK(report.entries[1].algorithm == "sgd");
}

TEST_CASE("deployed policies load from files and checkpoint directories") {
  test_support::QuadraticProblem prob = easy_problem();
  PolicyParams best = init_policy(prob.groups(), 4, 21);
  PolicyParams current = init_policy(prob.groups(), 4, 22);
  REQUIRE_FALSE(same_mat(best.groups[0].w_input, current.groups[0].w_input));

  TempDir dir("policy");
  save_policy(best, dir.file("direct.bin"));
  PolicyParams loaded = load_deployed_policy(dir.file("direct.bin"));
  CHECK(same_mat(loaded.groups[0].w_input, best.groups[0].w_input));

  // Directory with only the rolling policy.
  TempDir only_current("cur");
  save_policy(current, only_current.file("policy.bin"));
  loaded = load_deployed_policy(only_current.str());
  CHECK(same_mat(loaded.groups[0].w_input, current.groups[0].w_input));

  // Best takes precedence when both are present.
  save_policy(best, only_current.file("best_policy.bin"));
  loaded = load_deployed_policy(only_current.str());
  CHECK(same_mat(loaded.groups[0].w_input, best.groups[0].w_input));

  TempDir empty("none");
  CHECK_THROWS_WITH_AS(load_deployed_policy(empty.str()), doctest::Contains("best_policy"),
                       IoError);
}

TEST_CASE("comparison runs the deployed policy next to the baselines") {
  test_support::QuadraticProblem prob = easy_problem();
  TempDir dir("psd");
  save_policy(init_policy(prob.groups(), 4, 33), dir.file("pi.bin"));

  CompareOptions opts;
  opts.algorithms = {"psd", "sgd"};
  opts.seeds = {1, 2};
  opts.horizon = 15;
  opts.checkpoint = dir.file("pi.bin");

  std::vector<RunRecord> records;
  CompareReport report = run_compare(prob, opts, &records);
  REQUIRE(report.entries.size() == 2);
  for (const AlgorithmStats& st : report.entries) {
    if (st.algorithm == "psd") {
      CHECK(st.tuned_step == 0.0);
    } else {
      CHECK(st.tuned_step > 0.0);
    }
    CHECK(st.runs == 2);
  }
  REQUIRE(records.size() == 4);

  // A policy whose group kinds disagree with the problem is rejected.
  CoordinateGroupSpec wrong;
  wrong.groups.push_back({"b", "bias", 0, 3});
  TempDir wrong_dir("kinds");
  save_policy(init_policy(wrong, 4, 1), wrong_dir.file("pi.bin"));
  CompareOptions bad = opts;
  bad.algorithms = {"psd"};
  bad.checkpoint = wrong_dir.file("pi.bin");
  CHECK_THROWS_WITH_AS(run_compare(prob, bad), doctest::Contains("kinds"), InvalidArgument);
}

TEST_CASE("comparison validates its options") {
  test_support::QuadraticProblem prob = easy_problem();
  CompareOptions opts;
  opts.seeds = {1};
  CHECK_THROWS_AS(run_compare(prob, opts), InvalidArgument);
  opts.algorithms = {"sgd"};
  opts.seeds = {};
  CHECK_THROWS_AS(run_compare(prob, opts), InvalidArgument);
  opts.seeds = {1};
  opts.horizon = -1;
  CHECK_THROWS_AS(run_compare(prob, opts), InvalidArgument);
  opts.horizon = 10;
  opts.algorithms = {"psd"};
  opts.checkpoint = "";
  CHECK_THROWS_WITH_AS(run_compare(prob, opts), doctest::Contains("checkpoint"), ConfigError);
}

TEST_CASE("mean curves and the ranking table are written as documented") {
  CompareReport report;
  AlgorithmStats a;
  a.algorithm = "alpha";
  a.tuned_step = 0.25;
  a.runs = 2;
  a.diverged_runs = 0;
  a.meta_loss_mean = 3.5;
  a.meta_loss_sd = 0.5;
  a.final_obj_mean = 1.25;
  a.final_obj_sd = 0.25;
  a.mean_curve = {1.5, 2.5};
  a.rank = 1;
  AlgorithmStats b;
  b.algorithm = "psd";
  b.tuned_step = 0.0;
  b.runs = 2;
  b.diverged_runs = 1;
  b.meta_loss_mean = kInf;
  b.mean_curve = {4.0, 8.0};
  b.rank = 2;
  report.entries = {a, b};

  std::ostringstream means;
  write_means_csv(means, report);
  const std::vector<std::string> mrows = lines_of(means.str());
  REQUIRE(mrows.size() == 5);
  CHECK(mrows[0] == "algorithm,iteration,mean_true_objective,runs");
  CHECK(mrows[1] == "alpha,0,1.5,2");
  CHECK(mrows[2] == "alpha,1,2.5,2");
  CHECK(mrows[3] == "psd,0,4,1");
  CHECK(mrows[4] == "psd,1,8,1");

  std::ostringstream table;
  write_report(table, report);
  const std::vector<std::string> trows = lines_of(table.str());
  REQUIRE(trows.size() == 3);
  CHECK(trows[0].find("rank") == 0);
  CHECK(trows[1].find("1  alpha  3.5+-0.5  1.25+-0.25  0/2  0.25") == 0);
  CHECK(trows[2].find("inf") != std::string::npos);
  CHECK(trows[2].find("1/2") != std::string::npos);
  // The policy has no tuned step; the column shows a dash.
  CHECK(trows[2].back() == '-');

  std::ostringstream curves;
  write_curves_csv(curves, {});
  CHECK(lines_of(curves.str()).size() == 1);
}
