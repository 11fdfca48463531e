#pragma once

#include <Eigen/Core>
#include <vector>

#include "metaopt/controller.hpp"
#include "metaopt/lqg.hpp"

namespace metaopt {

// Local time-varying linear dynamics of one coordinate's state under one
// group's controller: s_{t+1} ~ N(A_t s_t + B_t a_t + c_t, F_t).
struct StageDynamics {
  Eigen::MatrixXd A;  // kStateDim x kStateDim
  Eigen::MatrixXd B;  // kStateDim x 1
  Eigen::VectorXd c;
  Eigen::MatrixXd F;  // symmetric, eigenvalues >= 1e-8 after flooring
};

struct DynamicsModel {
  int horizon = 0;
  std::vector<std::vector<StageDynamics>> groups;  // [group][t], t in 0..T-1
};

// Local quadratic model of one coordinate's share of the cost:
// c_j(s) = 0.5 s'Cs + d's + h, with the scalar cost divided equally across
// all coordinates of the problem.
struct StageCost {
  Eigen::MatrixXd C;  // symmetric (diagonal by construction here)
  Eigen::VectorXd d;
  double h = 0.0;
};

struct QuadraticCostModel {
  int horizon = 0;
  std::vector<std::vector<StageCost>> groups;  // [group][t], t in 0..T
};

// Pooled ridge regressions per (group, t) over all rollouts and group
// coordinates. `ridge` is relative to the regressor scale (multiplied by the
// mean squared feature magnitude); the constant regressor is never penalized.
// Throws NumericalError on rank-deficient fits when ridge is zero.
DynamicsModel fit_dynamics(const std::vector<Trajectory>& samples,
                           const CoordinateGroupSpec& spec, double ridge);

QuadraticCostModel fit_cost(const std::vector<Trajectory>& samples,
                            const CoordinateGroupSpec& spec, double ridge);

// Per (group, t) linear-Gaussian fit of the policy's mean action against the
// sampled states: a ~ N(Kbar s + kbar, var). `policy_means[r][t]` holds the
// policy's mean actions along samples[r] (from policy_forward). The fitted
// variance is the regression residual variance plus the group's own action
// variance, floored at 1e-8.
std::vector<std::vector<GaussianConditional>> fit_policy_linearization(
    const std::vector<Trajectory>& samples,
    const std::vector<std::vector<Eigen::VectorXd>>& policy_means,
    const CoordinateGroupSpec& spec, const std::vector<double>& action_var,
    double ridge);

}  // namespace metaopt
