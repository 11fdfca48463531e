#pragma once

#include <Eigen/Core>
#include <vector>

namespace metaopt {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Conditional Gaussian a | s ~ N(gain * s + offset, cov).
struct GaussianConditional {
  Eigen::MatrixXd gain;
  Eigen::VectorXd offset;
  Eigen::MatrixXd cov;

  int state_dim() const { return static_cast<int>(gain.cols()); }
  int action_dim() const { return static_cast<int>(gain.rows()); }
};

Gaussian condition(const GaussianConditional& g, const Eigen::VectorXd& s);

// Analytic KL(p || q). Arranged so that bitwise-identical inputs give exactly
// zero. Throws NumericalError when either covariance fails Cholesky.
double gaussian_kl(const Gaussian& p, const Gaussian& q);

// One stage of the per-group subproblem. Cost is state-only (the fitted model
// has no action term; actions matter through the dynamics backup). The
/// KL-to-reference terms enter the stage cost expanded quadratically:
//   stage(s, a) = 0.5 s'Cs + d's + h  -  lambda' a
//                 + nu * (-log policy_prior(a|s))  + kl_dual * (-log prev(a|s))
// and the controller covariance is (nu + kl_dual) * Qaa^{-1}, the max-entropy
// stationary point with per-stage entropy weight nu_t + kl_dual.
struct LqgStage {
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  double h = 0.0;

  Eigen::MatrixXd A, B;  // absent (empty) in the terminal stage
  Eigen::VectorXd c;
  Eigen::MatrixXd F;

  Eigen::VectorXd lambda;            // action-space dual, length = action dim
  double nu = 0.0;                   // constraint weight for the policy prior
  GaussianConditional policy_prior;  // fitted linearization of pi (used iff nu > 0)
  GaussianConditional prev;          // previous controller psi' at this t
};

struct LqgSubproblem {
  int horizon = 0;               // T; stages has T+1 entries, last is cost-only
  std::vector<LqgStage> stages;
  Eigen::VectorXd init_mean;     // moments of s_0 under the samples
  Eigen::MatrixXd init_cov;
  double epsilon = 1.0;          // trust radius for solve_eta
};

struct LqgSolution {
  std::vector<GaussianConditional> controller;  // T entries
  double achieved_kl = 0.0;
  double kl_dual = 0.0;
  bool damped_warning = false;  // trust region unattainable even at max dual
};

// Backward Riccati-style recursion over the augmented cost at a fixed dual.
// Time linear in T. Throws NumericalError if the action Hessian stays
// indefinite after escalating diagonal regularization.
std::vector<GaussianConditional> lqg_backward(const LqgSubproblem& sub, double kl_dual);

// Exact Gaussian propagation of (mean, cov) under the fitted dynamics and the
// given controller; returns the expected summed stage cost (state cost only,
// t = 0..T).
double expected_cost(const LqgSubproblem& sub,
                     const std::vector<GaussianConditional>& controller);

// Sum over t of E_{s_t}[KL(controller_t || prev_t)] with the state
// distribution propagated exactly under `controller`.
double propagated_kl(const LqgSubproblem& sub,
                     const std::vector<GaussianConditional>& controller);

// Dual search (bracketed bisection on log10 kl_dual) for the KL-constrained
/// solve: stops once the achieved KL lands in [0.5 eps, eps], or returns the
// least-damped controller satisfying the constraint; if even the maximum dual
// violates it, returns that maximally damped controller with a warning flag.
LqgSolution solve_eta(const LqgSubproblem& sub);

}  // namespace metaopt
