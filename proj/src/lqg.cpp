#include "metaopt/lqg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "metaopt/errors.hpp"

namespace metaopt {
namespace {

constexpr double kCovFloor = 1e-8;

double log_det_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + ": covariance is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void validate(const LqgSubproblem& sub) {
  if (sub.horizon < 1) throw InvalidArgument("lqg: horizon must be >= 1");
  if (static_cast<int>(sub.stages.size()) != sub.horizon + 1)
    throw InvalidArgument("lqg: stages must have horizon + 1 entries");
  const int ds = static_cast<int>(sub.init_mean.size());
  if (sub.init_cov.rows() != ds || sub.init_cov.cols() != ds)
    throw InvalidArgument("lqg: init moments dimension mismatch");
  for (int t = 0; t <= sub.horizon; ++t) {
    const LqgStage& st = sub.stages[t];
    if (st.C.rows() != ds || st.C.cols() != ds || st.d.size() != ds)
      throw InvalidArgument("lqg: cost dims mismatch at t=" + std::to_string(t));
    if (st.nu < 0) throw InvalidArgument("lqg: nu must be >= 0");
    if (t < sub.horizon) {
      if (st.A.rows() != ds || st.A.cols() != ds || st.B.rows() != ds ||
          st.c.size() != ds)
        throw InvalidArgument("lqg: dynamics dims mismatch at t=" + std::to_string(t));
      const int da = static_cast<int>(st.B.cols());
      if (da < 1 || st.lambda.size() != da)
        throw InvalidArgument("lqg: action/dual dims mismatch at t=" + std::to_string(t));
      if (st.prev.gain.rows() != da || st.prev.gain.cols() != ds)
        throw InvalidArgument("lqg: previous controller dims mismatch at t=" +
                              std::to_string(t));
      if (st.nu > 0 &&
          (st.policy_prior.gain.rows() != da || st.policy_prior.gain.cols() != ds))
        throw InvalidArgument("lqg: policy prior dims mismatch at t=" +
                              std::to_string(t));
    }
  }
}

// Adds w * (-log r(a|s)) to the quadratic stage coefficients (constant terms
// dropped; they do not move the minimizer).
void add_neg_log_gaussian(double w, const GaussianConditional& r,
                          Eigen::MatrixXd& qss, Eigen::MatrixXd& qsa,
                          Eigen::MatrixXd& qaa, Eigen::VectorXd& qs,
                          Eigen::VectorXd& qa) {
  if (w == 0.0) return;
  Eigen::LLT<Eigen::MatrixXd> llt(r.cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("lqg: reference covariance is not positive definite");
  Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(r.cov.rows(), r.cov.cols()));
  Eigen::MatrixXd pk = prec * r.gain;           // da x ds
  qaa += w * prec;
  qsa -= w * pk.transpose();                    // ds x da
  qss += w * r.gain.transpose() * pk;
  qa -= w * prec * r.offset;
  qs += w * pk.transpose() * r.offset;
}

}  // namespace

Gaussian condition(const GaussianConditional& g, const Eigen::VectorXd& s) {
  Gaussian out;
  out.mean = g.gain * s + g.offset;
  out.cov = g.cov;
  return out;
}

double gaussian_kl(const Gaussian& p, const Gaussian& q) {
  const int d = static_cast<int>(p.mean.size());
  if (q.mean.size() != d || p.cov.rows() != d || q.cov.rows() != d)
    throw InvalidArgument("gaussian_kl: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> lq(q.cov);
  if (lq.info() != Eigen::Success)
    throw NumericalError("gaussian_kl: q covariance is not positive definite");
  double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  double logdet_p = log_det_spd(p.cov, "gaussian_kl");
  // tr(Sq^-1 Sp) - d is computed as tr(Sq^-1 (Sp - Sq)) so that identical
  // inputs give exactly zero.
  double tr = lq.solve(p.cov - q.cov).trace();
  Eigen::VectorXd dm = q.mean - p.mean;
  double maha = dm.dot(lq.solve(dm));
  return 0.5 * (tr + maha + logdet_q - logdet_p);
}

std::vector<GaussianConditional> lqg_backward(const LqgSubproblem& sub, double kl_dual) {
  validate(sub);
  if (kl_dual < 0) throw InvalidArgument("lqg_backward: kl_dual must be >= 0");
  const int T = sub.horizon;
  const int ds = static_cast<int>(sub.init_mean.size());

  std::vector<GaussianConditional> out(T);
  Eigen::MatrixXd V = sub.stages[T].C;
  Eigen::VectorXd v = sub.stages[T].d;

  for (int t = T - 1; t >= 0; --t) {
    const LqgStage& st = sub.stages[t];
    const int da = static_cast<int>(st.B.cols());

    Eigen::MatrixXd qss = st.C;
    Eigen::MatrixXd qsa = Eigen::MatrixXd::Zero(ds, da);
    Eigen::MatrixXd qaa = Eigen::MatrixXd::Zero(da, da);
    Eigen::VectorXd qs = st.d;
    Eigen::VectorXd qa = -st.lambda;

    add_neg_log_gaussian(st.nu, st.policy_prior, qss, qsa, qaa, qs, qa);
    add_neg_log_gaussian(kl_dual, st.prev, qss, qsa, qaa, qs, qa);

    // dynamics backup through the continuation value
    Eigen::MatrixXd va = V * st.A;
    Eigen::MatrixXd vb = V * st.B;
    qss.noalias() += st.A.transpose() * va;
    qsa.noalias() += st.A.transpose() * vb;
    qaa.noalias() += st.B.transpose() * vb;
    Eigen::VectorXd vc = V * st.c + v;
    qs.noalias() += st.A.transpose() * vc;
    qa.noalias() += st.B.transpose() * vc;

    qss = 0.5 * (qss + qss.transpose()).eval();
    qaa = 0.5 * (qaa + qaa.transpose()).eval();

    // regularize the action Hessian until it is positive definite
    double delta = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(qaa);
    while (llt.info() != Eigen::Success) {
      delta = delta == 0.0 ? 1e-8 : delta * 10.0;
      if (delta > 1e-2)
        throw NumericalError(
            "lqg_backward: action Hessian stayed indefinite at t=" + std::to_string(t) +
            " despite regularization " + std::to_string(delta));
      llt.compute(qaa + delta * Eigen::MatrixXd::Identity(da, da));
    }

    GaussianConditional ctrl;
    ctrl.gain = -llt.solve(qsa.transpose());
    ctrl.offset = -llt.solve(qa);

    double beta = st.nu + kl_dual;
    if (beta > 0.0) {
      ctrl.cov = beta * llt.solve(Eigen::MatrixXd::Identity(da, da));
      ctrl.cov = 0.5 * (ctrl.cov + ctrl.cov.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ctrl.cov);
      if (es.eigenvalues().minCoeff() < kCovFloor) {
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(kCovFloor);
        ctrl.cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      }
    } else {
      ctrl.cov = kCovFloor * Eigen::MatrixXd::Identity(da, da);
    }

    // value update: V(s) = Q(s, K s + k) up to constants
    V = qss + qsa * ctrl.gain;
    V = 0.5 * (V + V.transpose()).eval();
    v = qs + qsa * ctrl.offset;

    out[t] = std::move(ctrl);
  }
  return out;
}

double expected_cost(const LqgSubproblem& sub,
                     const std::vector<GaussianConditional>& controller) {
  validate(sub);
  if (static_cast<int>(controller.size()) != sub.horizon)
    throw InvalidArgument("expected_cost: controller length mismatch");
  Eigen::VectorXd m = sub.init_mean;
  Eigen::MatrixXd S = sub.init_cov;
  double total = 0.0;
  for (int t = 0; t <= sub.horizon; ++t) {
    const LqgStage& st = sub.stages[t];
    total += 0.5 * (m.dot(st.C * m) + (st.C * S).trace()) + st.d.dot(m) + st.h;
    if (t == sub.horizon) break;
    const GaussianConditional& ct = controller[t];
    Eigen::MatrixXd closed = st.A + st.B * ct.gain;
    m = closed * m + st.B * ct.offset + st.c;
    S = closed * S * closed.transpose() + st.B * ct.cov * st.B.transpose() + st.F;
    S = 0.5 * (S + S.transpose()).eval();
  }
  return total;
}

double propagated_kl(const LqgSubproblem& sub,
                     const std::vector<GaussianConditional>& controller) {
  validate(sub);
  if (static_cast<int>(controller.size()) != sub.horizon)
    throw InvalidArgument("propagated_kl: controller length mismatch");
  Eigen::VectorXd m = sub.init_mean;
  Eigen::MatrixXd S = sub.init_cov;
  double total = 0.0;
  for (int t = 0; t < sub.horizon; ++t) {
    const LqgStage& st = sub.stages[t];
    const GaussianConditional& ct = controller[t];
    const GaussianConditional& pv = st.prev;
    const int da = ct.action_dim();

    Eigen::LLT<Eigen::MatrixXd> lq(pv.cov);
    if (lq.info() != Eigen::Success)
      throw NumericalError("propagated_kl: previous covariance not positive definite");
    double logdet_prev = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
    double logdet_new = log_det_spd(ct.cov, "propagated_kl");

    Eigen::MatrixXd dk = ct.gain - pv.gain;
    Eigen::VectorXd dm = dk * m + (ct.offset - pv.offset);
    double tr_cov = lq.solve(ct.cov - pv.cov).trace();
    double maha = dm.dot(lq.solve(dm));
    double tr_gain = (lq.solve(dk * S * dk.transpose())).trace();
    total += 0.5 * (tr_cov + maha + tr_gain + logdet_prev - logdet_new);
    (void)da;

    Eigen::MatrixXd closed = st.A + st.B * ct.gain;
    m = closed * m + st.B * ct.offset + st.c;
    S = closed * S * closed.transpose() + st.B * ct.cov * st.B.transpose() + st.F;
    S = 0.5 * (S + S.transpose()).eval();
  }
  return total;
}

LqgSolution solve_eta(const LqgSubproblem& sub) {
  if (!(sub.epsilon > 0)) throw InvalidArgument("solve_eta: epsilon must be > 0");
  LqgSolution sol;

  sol.controller = lqg_backward(sub, 0.0);
  sol.achieved_kl = propagated_kl(sub, sol.controller);
  sol.kl_dual = 0.0;
  if (sol.achieved_kl <= sub.epsilon) return sol;

  // The unconstrained solve violates the trust region; search the dual on a
  // log bracket. KL is non-increasing in the dual.
  double lo = -8.0, hi = 8.0;
  {
    double rho = std::pow(10.0, hi);
    auto ctrl = lqg_backward(sub, rho);
    double kl = propagated_kl(sub, ctrl);
    if (kl > sub.epsilon) {
      sol.controller = std::move(ctrl);
      sol.achieved_kl = kl;
      sol.kl_dual = rho;
      sol.damped_warning = true;
      return sol;
    }
    sol.controller = std::move(ctrl);
    sol.achieved_kl = kl;
    sol.kl_dual = rho;
  }

  for (int it = 0; it < 30; ++it) {
    double mid = 0.5 * (lo + hi);
    double rho = std::pow(10.0, mid);
    auto ctrl = lqg_backward(sub, rho);
    double kl = propagated_kl(sub, ctrl);
    if (kl <= sub.epsilon) {
      // feasible; keep the least-damped feasible solve seen so far
      sol.controller = std::move(ctrl);
      sol.achieved_kl = kl;
      sol.kl_dual = rho;
      hi = mid;
      if (kl >= 0.5 * sub.epsilon) return sol;
    } else {
      lo = mid;
    }
  }
  return sol;
}

}  // namespace metaopt
