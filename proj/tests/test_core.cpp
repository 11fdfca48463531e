#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "metaopt/dataset.hpp"
#include "metaopt/errors.hpp"
#include "metaopt/mlp.hpp"
#include "metaopt/num.hpp"
#include "metaopt/problem.hpp"
#include "metaopt/rng.hpp"
#include "support/test_problems.hpp"

using namespace metaopt;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("rng is deterministic and mix separates streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  CHECK(Rng::mix(1, 2) != Rng::mix(1, 3));
  CHECK(Rng::mix(1, 2) != Rng::mix(2, 2));
  CHECK(Rng::mix(1, 2, 3) == Rng::mix(Rng::mix(1, 2), 3));
}

TEST_CASE("rng uniform and normal have sane statistics") {
  Rng rng(7);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sumsq / n == doctest::Approx(1.0 / 3.0).epsilon(0.01));

  double nsum = 0.0, nsumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    nsum += z;
    nsumsq += z * z;
  }
  CHECK(std::fabs(nsum / n) < 0.02);
  CHECK(nsumsq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("rng below is unbiased over small ranges") {
  Rng rng(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) CHECK(c > 9000);
}

TEST_CASE("format_double round trips exactly") {
  for (double v : {0.0, -0.0, 1.5, 1e-300, -3.25e17, 0.1, 2.0 / 3.0}) {
    CHECK(parse_double(format_double(v), "t") == v);
  }
  double inf = std::numeric_limits<double>::infinity();
  CHECK(parse_double(format_double(inf), "t") == inf);
  CHECK(std::isnan(parse_double(format_double(std::nan("")), "t")));
}

TEST_CASE("parse_double rejects garbage") {
  CHECK_THROWS_AS(parse_double("1.5x", "t"), InvalidArgument);
  CHECK_THROWS_AS(parse_double("", "t"), InvalidArgument);
  CHECK_THROWS_AS(parse_int("12.5", "t"), InvalidArgument);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
  std::vector<std::atomic<int>> hits(257);
  for (auto& h : hits) h = 0;
  parallel_for(257, [&](int i) { ++hits[i]; });
  for (auto& h : hits) CHECK(h == 1);

  CHECK_THROWS_AS(
      parallel_for(8, [](int i) { if (i == 5) throw NumericalError("boom"); }),
      NumericalError);
}

TEST_CASE("gaussian mixture dataset is balanced, normalized, deterministic") {
  Dataset ds = make_gaussian_mixture(4, 8, 256, 2.0, 7);
  CHECK(ds.num_examples() == 256);
  CHECK(ds.input_dim() == 8);
  CHECK(ds.num_classes == 4);

  std::vector<int> counts(4, 0);
  for (auto l : ds.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 4);
    ++counts[l];
  }
  for (int c : counts) CHECK(c == 64);

  for (int d = 0; d < 8; ++d) {
    double mean = ds.inputs.col(d).mean();
    double var = ds.inputs.col(d).array().square().mean() - mean * mean;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }

  Dataset again = make_gaussian_mixture(4, 8, 256, 2.0, 7);
  CHECK(ds.inputs == again.inputs);
  CHECK(ds.labels == again.labels);
  Dataset other = make_gaussian_mixture(4, 8, 256, 2.0, 8);
  CHECK(ds.inputs != other.inputs);
}

TEST_CASE("two spirals dataset is 2-d two-class") {
  Dataset ds = make_two_spirals(200, 0.05, 3);
  CHECK(ds.input_dim() == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.num_examples() == 200);
  std::set<std::int32_t> seen(ds.labels.begin(), ds.labels.end());
  CHECK(seen == std::set<std::int32_t>{0, 1});
}

TEST_CASE("dataset file round trip is exact") {
  Dataset ds = make_gaussian_mixture(3, 5, 60, 2.0, 1);
  const std::string path = temp_path("metaopt_ds_roundtrip.bin");
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  CHECK(back.inputs == ds.inputs);  // generator snaps to f32, so exact
  CHECK(back.labels == ds.labels);
  CHECK(back.num_classes == ds.num_classes);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_dataset(temp_path("metaopt_no_such_file.bin")), IoError);
}

TEST_CASE("projection with identity hook is a normalization fixed point") {
  Dataset ds = make_gaussian_mixture(4, 8, 256, 2.0, 9);
  Dataset proj = project_dataset(ds, 8, 5, /*identity_projection=*/true);
  for (int d = 0; d < 8; ++d) {
    double mean = proj.inputs.col(d).mean();
    double var = proj.inputs.col(d).array().square().mean() - mean * mean;
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(proj.labels == ds.labels);
  CHECK_THROWS_AS(project_dataset(ds, 4, 5, true), InvalidArgument);
}

TEST_CASE("random projection shapes and determinism") {
  Dataset ds = make_gaussian_mixture(10, 64, 300, 2.0, 0);  // stands in for 8x8 digits
  Dataset p1 = project_dataset(ds, 8, 0);
  CHECK(p1.num_examples() == 300);
  CHECK(p1.input_dim() == 8);
  Dataset p2 = project_dataset(ds, 8, 0);
  CHECK(p1.inputs == p2.inputs);
  CHECK_THROWS_AS(project_dataset(ds, 0, 0), InvalidArgument);
}

TEST_CASE("coordinate groups partition the flat layout") {
  MlpArchitecture arch{48, 48, 10, Activation::relu};
  CHECK(arch.param_count() == 2304 + 48 + 480 + 10);
  CoordinateGroupSpec spec = coordinate_groups(arch);
  REQUIRE(spec.num_groups() == 4);
  CHECK(spec.groups[0].size() == 2304);
  CHECK(spec.groups[1].size() == 48);
  CHECK(spec.groups[2].size() == 480);
  CHECK(spec.groups[3].size() == 10);
  CHECK(spec.groups[0].kind == "weight");
  CHECK(spec.groups[1].kind == "bias");
  CHECK(spec.groups[2].kind == "weight");
  CHECK(spec.groups[3].kind == "bias");
  int expect_begin = 0;
  for (const auto& g : spec.groups) {
    CHECK(g.begin == expect_begin);
    expect_begin = g.end;
  }
  CHECK(expect_begin == arch.param_count());

  MlpArchitecture tiny{1, 1, 1, Activation::relu};
  CoordinateGroupSpec tiny_spec = coordinate_groups(tiny);
  for (const auto& g : tiny_spec.groups) CHECK(g.size() == 1);
}

TEST_CASE("kind sequences match across sizes, layouts do not") {
  CoordinateGroupSpec a = coordinate_groups({8, 8, 4, Activation::relu});
  CoordinateGroupSpec b = coordinate_groups({2, 16, 2, Activation::relu});
  CHECK(a.same_kinds(b));
  CHECK(!a.same_layout(b));
  CHECK(a.same_layout(a));
}

TEST_CASE("mlp loss at zero weights is log num_classes") {
  Dataset ds = make_gaussian_mixture(2, 4, 64, 2.0, 5);
  MlpArchitecture arch{4, 3, 2, Activation::relu};
  Eigen::VectorXd params = Eigen::VectorXd::Zero(arch.param_count());
  Eigen::MatrixXd batch = ds.inputs.transpose();
  double loss = mlp_loss(arch, params, batch, ds.labels, nullptr);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mlp analytic gradient matches finite differences") {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    MlpArchitecture arch{3, 4, 3, trial % 2 == 0 ? Activation::relu : Activation::tanh};
    Rng rng(Rng::mix(100, trial));
    Eigen::VectorXd params(arch.param_count());
    for (int i = 0; i < params.size(); ++i) params[i] = 0.5 * rng.normal();
    Eigen::MatrixXd batch(3, 6);
    std::vector<std::int32_t> labels(6);
    for (int c = 0; c < 6; ++c) {
      for (int r = 0; r < 3; ++r) batch(r, c) = rng.normal();
      labels[c] = static_cast<std::int32_t>(rng.below(3));
    }
    Eigen::VectorXd grad;
    mlp_loss(arch, params, batch, labels, &grad);
    Eigen::VectorXd fd = test_support::central_diff(
        [&](const Eigen::VectorXd& p) { return mlp_loss(arch, p, batch, labels, nullptr); },
        params);
    CHECK(test_support::max_rel_err(grad, fd) < 1e-7);
  }
}

TEST_CASE("hidden unit permutation leaves the loss unchanged") {
  MlpArchitecture arch{5, 4, 3, Activation::relu};
  Rng rng(77);
  Eigen::VectorXd params(arch.param_count());
  for (int i = 0; i < params.size(); ++i) params[i] = rng.normal();
  Eigen::MatrixXd batch(5, 8);
  std::vector<std::int32_t> labels(8);
  for (int c = 0; c < 8; ++c) {
    for (int r = 0; r < 5; ++r) batch(r, c) = rng.normal();
    labels[c] = static_cast<std::int32_t>(rng.below(3));
  }

  // Swap hidden units 0 and 2: rows of W1, entries of b1, columns of W2.
  Eigen::VectorXd permuted = params;
  const int H = arch.hidden_dim, I = arch.input_dim, O = arch.output_dim;
  for (int i = 0; i < I; ++i) std::swap(permuted[0 * I + i], permuted[2 * I + i]);
  std::swap(permuted[H * I + 0], permuted[H * I + 2]);
  const int w2 = H * I + H;
  for (int o = 0; o < O; ++o) std::swap(permuted[w2 + o * H + 0], permuted[w2 + o * H + 2]);

  double base = mlp_loss(arch, params, batch, labels, nullptr);
  double swapped = mlp_loss(arch, permuted, batch, labels, nullptr);
  CHECK(swapped == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("training problem init iterate: biases zero, weights scaled, deterministic") {
  Dataset ds = make_gaussian_mixture(10, 48, 600, 2.0, 13);
  TrainingProblem prob(ds, {48, 48, 10, Activation::relu}, 16, 256, 5);
  Eigen::VectorXd x = prob.init_iterate(3);
  Eigen::VectorXd y = prob.init_iterate(3);
  CHECK(x == y);
  CHECK(x != prob.init_iterate(4));

  const CoordinateGroupSpec& spec = prob.groups();
  for (int j = spec.groups[1].begin; j < spec.groups[1].end; ++j) CHECK(x[j] == 0.0);
  for (int j = spec.groups[3].begin; j < spec.groups[3].end; ++j) CHECK(x[j] == 0.0);

  double sq = 0.0;
  for (int j = spec.groups[0].begin; j < spec.groups[0].end; ++j) sq += x[j] * x[j];
  double sd = std::sqrt(sq / spec.groups[0].size());
  CHECK(sd == doctest::Approx(1.0 / std::sqrt(48.0)).epsilon(0.2));
}

TEST_CASE("noisy_eval is a pure function of (x, step) and matches FD") {
  Dataset ds = make_gaussian_mixture(3, 5, 120, 2.0, 21);
  TrainingProblem prob(ds, {5, 4, 3, Activation::relu}, 8, 120, 9);
  Eigen::VectorXd x = prob.init_iterate(1);

  EvalResult a = prob.noisy_eval(x, 17);
  EvalResult b = prob.noisy_eval(x, 17);
  CHECK(a.value == b.value);
  CHECK(a.gradient == b.gradient);
  CHECK(a.value != prob.noisy_eval(x, 18).value);

  Eigen::VectorXd fd = test_support::central_diff(
      [&](const Eigen::VectorXd& p) { return prob.noisy_eval(p, 17).value; }, x);
  CHECK(test_support::max_rel_err(a.gradient, fd) < 1e-6);

  CHECK(prob.minibatch_fingerprint(17) == prob.minibatch_fingerprint(17));
  CHECK(prob.minibatch_fingerprint(17) != prob.minibatch_fingerprint(18));
}

TEST_CASE("true_eval with full holdout equals the full-data loss") {
  Dataset ds = make_gaussian_mixture(10, 6, 90, 2.0, 31);
  TrainingProblem prob(ds, {6, 4, 10, Activation::relu}, 8, 90, 2);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(prob.param_count());
  CHECK(prob.true_eval(zero) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Eigen::MatrixXd batch = ds.inputs.transpose();
  Eigen::VectorXd x = prob.init_iterate(8);
  double direct = mlp_loss(prob.architecture(), x, batch, ds.labels, nullptr);
  CHECK(prob.true_eval(x) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("holdout variance sits below minibatch variance") {
  Dataset ds = make_gaussian_mixture(4, 6, 512, 2.0, 41);
  Eigen::VectorXd x;
  {
    TrainingProblem ref(ds, {6, 5, 4, Activation::relu}, 8, 128, 0);
    x = ref.init_iterate(12);
  }
  std::vector<double> holdout_vals, minibatch_vals;
  for (std::uint64_t s = 1; s <= 24; ++s) {
    TrainingProblem p(ds, {6, 5, 4, Activation::relu}, 8, 128, s);
    holdout_vals.push_back(p.true_eval(x));
    minibatch_vals.push_back(p.noisy_eval(x, 0).value);
  }
  auto variance = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double a : v) m += a;
    m /= v.size();
    double acc = 0.0;
    for (double a : v) acc += (a - m) * (a - m);
    return acc / (v.size() - 1);
  };
  const double hv = variance(holdout_vals);
  const double mv = variance(minibatch_vals);
  CHECK(hv > 0.0);
  CHECK(hv < mv);
}

TEST_CASE("non-finite evaluation reports the offending coordinate") {
  Dataset ds = make_gaussian_mixture(2, 4, 64, 2.0, 51);
  TrainingProblem prob(ds, {4, 3, 2, Activation::relu}, 8, 64, 1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(prob.param_count());
  x[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(prob.noisy_eval(x, 0), doctest::Contains("coordinate 2"),
                       NumericalError);
}

TEST_CASE("projected digits problem wires projection into a training problem") {
  Dataset ds = make_gaussian_mixture(10, 64, 400, 2.0, 61);
  DigitsProblemOptions opts;
  opts.hidden_dim = 6;
  opts.minibatch_size = 8;
  opts.holdout_batch_size = 128;
  TrainingProblem prob = make_projected_digits_problem(ds, 8, 3, opts);
  CHECK(prob.architecture().input_dim == 8);
  CHECK(prob.architecture().hidden_dim == 6);
  CHECK(prob.architecture().output_dim == 10);
  CHECK(prob.param_count() == 8 * 6 + 6 + 6 * 10 + 10);
}

TEST_CASE("digits csv import parses the p0..p63,label schema") {
  const std::string path = temp_path("metaopt_digits_test.csv");
  {
    FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f != nullptr);
    for (int row = 0; row < 3; ++row) {
      for (int i = 0; i < 64; ++i) std::fprintf(f, "%d,", (row + i) % 17);
      std::fprintf(f, "%d\n", row % 10);
    }
    std::fclose(f);
  }
  Dataset ds = load_digits_csv(path);
  CHECK(ds.num_examples() == 3);
  CHECK(ds.input_dim() == 64);
  CHECK(ds.labels[2] == 2);
  std::remove(path.c_str());
}
