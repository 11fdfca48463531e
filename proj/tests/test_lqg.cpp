#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <chrono>
#include <cmath>
#include <vector>

#include "metaopt/errors.hpp"
#include "metaopt/lqg.hpp"
#include "metaopt/rng.hpp"

using namespace metaopt;

namespace {

Eigen::MatrixXd random_spd(int n, double scale, Rng& rng) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = rng.normal();
  return scale * (m.transpose() * m / n + 0.1 * Eigen::MatrixXd::Identity(n, n));
}

Eigen::MatrixXd random_matrix(int r, int c, double scale, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Eigen::VectorXd random_vector(int n, double scale, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

GaussianConditional random_scalar_controller(int ds, double gain_scale, double var,
                                             Rng& rng) {
  GaussianConditional g;
  g.gain = random_matrix(1, ds, gain_scale, rng);
  g.offset = random_vector(1, gain_scale, rng);
  g.cov = Eigen::MatrixXd::Constant(1, 1, var);
  return g;
}

// Scalar-action subproblem with smooth random coefficients. `prev_var` and
// `far_prev` shape how hard the trust region bites.
LqgSubproblem random_subproblem(int T, int ds, double nu, bool far_prev,
                                std::uint64_t seed) {
  Rng rng(seed);
  LqgSubproblem sub;
  sub.horizon = T;
  sub.init_mean = random_vector(ds, 1.0, rng);
  sub.init_cov = random_spd(ds, 0.5, rng);
  for (int t = 0; t <= T; ++t) {
    LqgStage st;
    st.C = random_spd(ds, 1.0, rng);
    st.d = random_vector(ds, 0.5, rng);
    st.h = rng.normal();
    if (t < T) {
      st.A = random_matrix(ds, ds, 0.5 / std::sqrt(ds), rng);
      st.B = random_matrix(ds, 1, 1.0, rng);
      st.c = random_vector(ds, 0.1, rng);
      st.F = random_spd(ds, 0.01, rng);
      st.lambda = random_vector(1, 0.2, rng);
      st.nu = nu;
      st.policy_prior = random_scalar_controller(ds, 0.2, 0.25, rng);
      st.prev = far_prev ? random_scalar_controller(ds, 0.0, 0.01, rng)
                         : random_scalar_controller(ds, 0.3, 0.25, rng);
    }
    sub.stages.push_back(std::move(st));
  }
  return sub;
}

// E_{s~N(m,S)}[KL(N(Ks+k, var) || N(Kr s+kr, var_r))] for scalar actions,
// written out in plain arithmetic.
double expected_scalar_kl(const Eigen::RowVectorXd& K, double k, double var,
                          const Eigen::RowVectorXd& Kr, double kr, double var_r,
                          const Eigen::VectorXd& m, const Eigen::MatrixXd& S) {
  Eigen::RowVectorXd dk = K - Kr;
  double dm = dk.dot(m.transpose()) + (k - kr);
  double spread = dk * S * dk.transpose();
  return 0.5 * (var / var_r - 1.0 + std::log(var_r / var) +
                (dm * dm + spread) / var_r);
}

// Full entropy-augmented objective the backward pass is meant to minimize:
// expected state cost - lambda' E[a] + nu KL(ctrl||prior) + rho KL(ctrl||prev)
// under exact Gaussian propagation. Independent of the production code paths.
double full_objective(const LqgSubproblem& sub,
                      const std::vector<GaussianConditional>& ctrl, double rho) {
  Eigen::VectorXd m = sub.init_mean;
  Eigen::MatrixXd S = sub.init_cov;
  double total = 0.0;
  for (int t = 0; t <= sub.horizon; ++t) {
    const LqgStage& st = sub.stages[t];
    total += 0.5 * (m.dot(st.C * m) + (st.C * S).trace()) + st.d.dot(m) + st.h;
    if (t == sub.horizon) break;

    const GaussianConditional& ct = ctrl[t];
    Eigen::RowVectorXd K = ct.gain.row(0);
    double k = ct.offset[0];
    double var = ct.cov(0, 0);
    total -= st.lambda[0] * (K.dot(m.transpose()) + k);
    if (st.nu > 0)
      total += st.nu * expected_scalar_kl(K, k, var, st.policy_prior.gain.row(0),
                                          st.policy_prior.offset[0],
                                          st.policy_prior.cov(0, 0), m, S);
    if (rho > 0)
      total += rho * expected_scalar_kl(K, k, var, st.prev.gain.row(0),
                                        st.prev.offset[0], st.prev.cov(0, 0), m, S);

    Eigen::MatrixXd closed = st.A + st.B * ct.gain;
    m = closed * m + st.B * ct.offset + st.c;
    S = closed * S * closed.transpose() + st.B * ct.cov * st.B.transpose() + st.F;
    S = 0.5 * (S + S.transpose()).eval();
  }
  return total;
}

LqgSubproblem scalar_chain(int T, double b, double lambda_val) {
  // s' = s + b a, unit state cost everywhere, nothing else.
  LqgSubproblem sub;
  sub.horizon = T;
  sub.init_mean = Eigen::VectorXd::Constant(1, 2.0);
  sub.init_cov = Eigen::MatrixXd::Constant(1, 1, 0.5);
  for (int t = 0; t <= T; ++t) {
    LqgStage st;
    st.C = Eigen::MatrixXd::Constant(1, 1, 1.0);
    st.d = Eigen::VectorXd::Zero(1);
    if (t < T) {
      st.A = Eigen::MatrixXd::Constant(1, 1, 1.0);
      st.B = Eigen::MatrixXd::Constant(1, 1, b);
      st.c = Eigen::VectorXd::Zero(1);
      st.F = Eigen::MatrixXd::Constant(1, 1, 0.01);
      st.lambda = Eigen::VectorXd::Constant(1, lambda_val);
      st.nu = 0.0;
      st.prev.gain = Eigen::MatrixXd::Zero(1, 1);
      st.prev.offset = Eigen::VectorXd::Zero(1);
      st.prev.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
    }
    sub.stages.push_back(std::move(st));
  }
  return sub;
}

}  // namespace

TEST_CASE("gaussian_kl reproduces hand-computed values") {
  Gaussian p{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  Gaussian q{Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  CHECK(gaussian_kl(p, q) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gaussian_kl(p, p) == 0.0);

  Gaussian p2{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 2.0).asDiagonal()};
  Gaussian q2{Eigen::Vector2d(1.0, -1.0), Eigen::Vector2d(2.0, 1.0).asDiagonal()};
  // 0.5 * (tr + maha - k + logdet ratio) = 0.5 * (2.5 + 1.5 - 2 + 0)
  CHECK(gaussian_kl(p2, q2) == doctest::Approx(1.0).epsilon(1e-12));

  Gaussian bad{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, -1.0)};
  CHECK_THROWS_AS(gaussian_kl(p, bad), NumericalError);
  Gaussian wrong{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
  CHECK_THROWS_AS(gaussian_kl(p, wrong), InvalidArgument);
}

TEST_CASE("gaussian_kl agrees with a Monte Carlo estimate") {
  Rng rng(5);
  Gaussian p, q;
  p.mean = Eigen::Vector2d(0.3, -0.2);
  p.cov = random_spd(2, 1.0, rng);
  q.mean = Eigen::Vector2d(-0.5, 0.4);
  q.cov = random_spd(2, 1.5, rng);

  Eigen::LLT<Eigen::MatrixXd> lp(p.cov), lq(q.cov);
  Eigen::MatrixXd Lp = lp.matrixL();
  double logdet_p = 2.0 * std::log(Lp(0, 0) * Lp(1, 1));
  Eigen::MatrixXd Lq_m = lq.matrixL();
  double logdet_q = 2.0 * std::log(Lq_m(0, 0) * Lq_m(1, 1));

  double acc = 0.0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    Eigen::Vector2d z(rng.normal(), rng.normal());
    Eigen::VectorXd x = p.mean + Lp * z;
    double lpdf_p = -0.5 * (z.squaredNorm() + logdet_p);
    Eigen::VectorXd wq = lq.matrixL().solve(x - q.mean);
    double lpdf_q = -0.5 * (wq.squaredNorm() + logdet_q);
    acc += lpdf_p - lpdf_q;
  }
  CHECK(gaussian_kl(p, q) == doctest::Approx(acc / n).epsilon(0.02));
}

TEST_CASE("condition applies the affine map and keeps the covariance") {
  Rng rng(3);
  GaussianConditional g;
  g.gain = random_matrix(1, 3, 1.0, rng);
  g.offset = Eigen::VectorXd::Constant(1, 0.25);
  g.cov = Eigen::MatrixXd::Constant(1, 1, 0.36);
  Eigen::Vector3d s(1.0, -2.0, 0.5);
  Gaussian out = condition(g, s);
  CHECK(out.mean[0] == doctest::Approx(g.gain.row(0).dot(s) + 0.25).epsilon(1e-15));
  CHECK(out.cov(0, 0) == 0.36);
}

TEST_CASE("scalar chains give the textbook gains") {
  // s' = s + a: the optimal controller cancels the state in one move.
  LqgSubproblem unit = scalar_chain(3, 1.0, 0.0);
  auto ctrl = lqg_backward(unit, 0.0);
  REQUIRE(ctrl.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(ctrl[t].gain(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(ctrl[t].offset[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  // s' = s + 2a scales the cancelling gain to -1/2.
  LqgSubproblem twob = scalar_chain(3, 2.0, 0.0);
  auto ctrl2 = lqg_backward(twob, 0.0);
  for (int t = 0; t < 3; ++t)
    CHECK(ctrl2[t].gain(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));

  // With nu = rho = 0 the covariance bottoms out at the floor.
  CHECK(ctrl[0].cov(0, 0) == 1e-8);
}

TEST_CASE("the action dual shifts the offset, not the gain") {
  // At T=1 with s'=s+a and unit costs: Qaa = 1, so the offset is exactly
  // +lambda while the gain stays the cancelling -1.
  LqgSubproblem sub = scalar_chain(1, 1.0, 0.7);
  auto ctrl = lqg_backward(sub, 0.0);
  CHECK(ctrl[0].gain(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(ctrl[0].offset[0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("with only the KL term the previous controller is a fixed point") {
  Rng rng(11);
  LqgSubproblem sub = random_subproblem(4, 3, 0.0, false, 12);
  for (auto& st : sub.stages) {
    st.C.setZero();
    st.d.setZero();
    st.h = 0.0;
    if (st.lambda.size() > 0) st.lambda.setZero();
  }
  auto ctrl = lqg_backward(sub, 2.5);
  for (int t = 0; t < sub.horizon; ++t) {
    const GaussianConditional& pv = sub.stages[t].prev;
    CHECK((ctrl[t].gain - pv.gain).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ctrl[t].offset - pv.offset).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(ctrl[t].cov(0, 0) == doctest::Approx(pv.cov(0, 0)).epsilon(1e-9));
  }
  CHECK(propagated_kl(sub, ctrl) < 1e-15);
}

TEST_CASE("expected_cost and propagated_kl match the plain-arithmetic oracle") {
  Rng rng(21);
  LqgSubproblem sub = random_subproblem(5, 3, 0.4, false, 22);
  std::vector<GaussianConditional> ctrl;
  for (int t = 0; t < 5; ++t) ctrl.push_back(random_scalar_controller(3, 0.3, 0.2, rng));

  // State-cost part: evaluate the oracle with the KL and dual terms off.
  LqgSubproblem stripped = sub;
  for (auto& st : stripped.stages) {
    st.nu = 0.0;
    if (st.lambda.size() > 0) st.lambda.setZero();
  }
  CHECK(expected_cost(sub, ctrl) ==
        doctest::Approx(full_objective(stripped, ctrl, 0.0)).epsilon(1e-10));

  // KL part: difference of the full objective at rho = 1 and rho = 0.
  double kl_oracle = full_objective(stripped, ctrl, 1.0) - full_objective(stripped, ctrl, 0.0);
  CHECK(propagated_kl(sub, ctrl) == doctest::Approx(kl_oracle).epsilon(1e-9));
}

TEST_CASE("the backward pass beats ten thousand rival controllers") {
  Rng rng(31);
  LqgSubproblem sub = random_subproblem(4, 3, 0.3, false, 32);
  const double rho = 0.7;
  auto best = lqg_backward(sub, rho);
  double best_cost = full_objective(sub, best, rho);

  int tried = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<GaussianConditional> rival = best;
    double scale = std::pow(10.0, -3.0 + 3.0 * rng.uniform());
    for (auto& ct : rival) {
      ct.gain += random_matrix(1, 3, scale, rng);
      ct.offset += random_vector(1, scale, rng);
      double factor = std::exp(scale * rng.normal());
      ct.cov *= factor;
    }
    double rival_cost = full_objective(sub, rival, rho);
    ++tried;
    CHECK(rival_cost >= best_cost - 1e-9 * std::fabs(best_cost));
  }
  CHECK(tried == 10000);
}

TEST_CASE("a loose trust region reduces to the unconstrained solve") {
  LqgSubproblem sub = random_subproblem(4, 3, 0.3, false, 42);
  sub.epsilon = 1e9;
  LqgSolution sol = solve_eta(sub);
  CHECK(sol.kl_dual == 0.0);
  CHECK(!sol.damped_warning);
  auto plain = lqg_backward(sub, 0.0);
  for (int t = 0; t < 4; ++t) {
    CHECK(sol.controller[t].gain == plain[t].gain);
    CHECK(sol.controller[t].offset == plain[t].offset);
  }
  CHECK(sol.achieved_kl == propagated_kl(sub, sol.controller));
}

TEST_CASE("a binding trust region is hit inside the target band") {
  LqgSubproblem sub = random_subproblem(5, 3, 0.3, true, 52);
  sub.epsilon = 0.05;
  double unconstrained = propagated_kl(sub, lqg_backward(sub, 0.0));
  REQUIRE(unconstrained > sub.epsilon);  // otherwise the test is vacuous

  LqgSolution sol = solve_eta(sub);
  CHECK(!sol.damped_warning);
  CHECK(sol.achieved_kl <= sub.epsilon * (1.0 + 1e-9));
  CHECK(sol.achieved_kl >= 0.05 * sub.epsilon);
  CHECK(sol.kl_dual > 0.0);
  CHECK(sol.achieved_kl == doctest::Approx(propagated_kl(sub, sol.controller)));
}

TEST_CASE("an impossible trust region returns maximum damping and a warning") {
  LqgSubproblem sub = random_subproblem(4, 3, 0.3, true, 62);
  sub.epsilon = 1e-30;
  LqgSolution sol = solve_eta(sub);
  CHECK(sol.damped_warning);
  CHECK(sol.kl_dual == doctest::Approx(1e8));
  CHECK(sol.achieved_kl > sub.epsilon);
  // Maximum damping parks the controller on top of the previous one.
  for (int t = 0; t < sub.horizon; ++t) {
    CHECK((sol.controller[t].gain - sub.stages[t].prev.gain).cwiseAbs().maxCoeff() <
          1e-5);
  }
}

TEST_CASE("raising the dual monotonically tightens the KL") {
  LqgSubproblem sub = random_subproblem(4, 3, 0.3, true, 72);
  double last = std::numeric_limits<double>::infinity();
  for (double rho : {1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0}) {
    double kl = propagated_kl(sub, lqg_backward(sub, rho));
    CHECK(kl < last);
    last = kl;
  }
}

TEST_CASE("shape errors are rejected") {
  LqgSubproblem sub = random_subproblem(3, 3, 0.3, false, 82);
  CHECK_THROWS_AS(lqg_backward(sub, -1.0), InvalidArgument);
  sub.stages.pop_back();
  CHECK_THROWS_AS(lqg_backward(sub, 0.0), InvalidArgument);

  LqgSubproblem ok = random_subproblem(3, 3, 0.3, false, 83);
  std::vector<GaussianConditional> ctrl(2);
  CHECK_THROWS_AS(expected_cost(ok, ctrl), InvalidArgument);
  ok.epsilon = 0.0;
  CHECK_THROWS_AS(solve_eta(ok), InvalidArgument);
}

TEST_CASE("backward pass cost grows linearly with the horizon") {
  LqgSubproblem short_sub = random_subproblem(200, 3, 0.3, false, 92);
  LqgSubproblem long_sub = random_subproblem(400, 3, 0.3, false, 93);

  auto time_one = [](const LqgSubproblem& sub) {
    double best = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 5; ++rep) {
      auto start = std::chrono::steady_clock::now();
      auto ctrl = lqg_backward(sub, 0.5);
      auto stop = std::chrono::steady_clock::now();
      double ms = std::chrono::duration<double, std::milli>(stop - start).count();
      best = std::min(best, ms);
      if (ctrl.empty()) break;  // keep the optimizer from eliding the call
    }
    return best;
  };

  double t_short = time_one(short_sub);
  double t_long = time_one(long_sub);
  // Doubling T should roughly double the work; 2.5x leaves scheduling slack.
  CHECK(t_long < 2.5 * std::max(t_short, 0.5));
}
