#include "metaopt/model_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

int longest_horizon(const std::vector<Trajectory>& samples) {
  if (samples.empty()) throw InvalidArgument("model fit: no sample trajectories");
  int horizon = 0;
  for (const auto& traj : samples) horizon = std::max(horizon, traj.steps());
  if (horizon < 1) throw InvalidArgument("model fit: sample trajectories have no steps");
  return horizon;
}

// Least squares of `targets` on `design` with a ridge penalty on every column
// except the intercept. The penalty is `ridge` times the mean squared
// magnitude of the penalized design columns, which keeps the fit invariant
// under duplicating samples.
Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& design, const Eigen::MatrixXd& targets,
                            double ridge, int intercept_col, const std::string& what) {
  const int p = static_cast<int>(design.cols());
  if (ridge > 0.0) {
    Eigen::MatrixXd gram = design.transpose() * design;
    const double pen_trace = gram.trace() - gram(intercept_col, intercept_col);
    const double r = ridge * pen_trace / std::max(p - 1, 1);
    for (int col = 0; col < p; ++col) {
      if (col != intercept_col) gram(col, col) += r;
    }
    Eigen::MatrixXd sol = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(design.transpose() * targets);
    if (!sol.allFinite()) {
      throw NumericalError(what + ": regression produced non-finite coefficients; increase ridge");
    }
    return sol;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < p) {
    throw NumericalError(what + ": design matrix is rank deficient (rank " +
                         std::to_string(qr.rank()) + " of " + std::to_string(p) +
                         "); pass ridge > 0");
  }
  return qr.solve(targets);
}

void check_pool(int rows, int regressors, double ridge, const std::string& what) {
  if (rows == 0) throw InvalidArgument(what + ": no pooled samples");
  if (ridge == 0.0 && rows < regressors + 1) {
    throw InvalidArgument(what + ": " + std::to_string(rows) + " pooled samples but " +
                          std::to_string(regressors + 1) +
                          " needed with ridge = 0; add rollouts or pass ridge > 0");
  }
}

std::string stage_tag(const char* op, const CoordinateGroup& group, int t) {
  return std::string(op) + " group " + group.name + " t=" + std::to_string(t);
}

}  // namespace

DynamicsModel fit_dynamics(const std::vector<Trajectory>& samples,
                           const CoordinateGroupSpec& spec, double ridge) {
  if (ridge < 0.0) throw InvalidArgument("fit_dynamics: ridge must be >= 0");
  const int horizon = longest_horizon(samples);
  const int regressors = kStateDim + 2;  // [s; a; 1]

  DynamicsModel model;
  model.horizon = horizon;
  model.groups.assign(spec.num_groups(), std::vector<StageDynamics>(horizon));

  parallel_for(spec.num_groups() * horizon, [&](int task) {
    const int g = task / horizon;
    const int t = task % horizon;
    const CoordinateGroup& group = spec.groups[g];

    int rows = 0;
    for (const auto& traj : samples) {
      if (traj.steps() > t) rows += group.size();
    }
    const std::string tag = stage_tag("fit_dynamics", group, t);
    check_pool(rows, regressors, ridge, tag);

    Eigen::MatrixXd design(rows, regressors);
    Eigen::MatrixXd targets(rows, kStateDim);
    int row = 0;
    for (const auto& traj : samples) {
      if (traj.steps() <= t) continue;
      for (int j = group.begin; j < group.end; ++j, ++row) {
        design.row(row).head(kStateDim) = traj.states[t].col(j).transpose();
        design(row, kStateDim) = traj.actions[t](j);
        design(row, kStateDim + 1) = 1.0;
        targets.row(row) = traj.states[t + 1].col(j).transpose();
      }
    }

    Eigen::MatrixXd coef = ridge_solve(design, targets, ridge, regressors - 1, tag);

    StageDynamics& stage = model.groups[g][t];
    stage.A = coef.topRows(kStateDim).transpose();
    stage.B = coef.row(kStateDim).transpose();
    stage.c = coef.row(kStateDim + 1).transpose();

    Eigen::MatrixXd resid = targets - design * coef;
    Eigen::MatrixXd cov = (resid.transpose() * resid) / static_cast<double>(rows);
    cov = 0.5 * (cov + cov.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) {
      throw NumericalError(tag + ": residual covariance eigendecomposition failed");
    }
    Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(1e-8);
    stage.F = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
    stage.F = 0.5 * (stage.F + stage.F.transpose()).eval();
  });
  return model;
}

QuadraticCostModel fit_cost(const std::vector<Trajectory>& samples,
                            const CoordinateGroupSpec& spec, double ridge) {
  if (ridge < 0.0) throw InvalidArgument("fit_cost: ridge must be >= 0");
  const int horizon = longest_horizon(samples);
  // The scalar objective is split equally across coordinates; a diagonal
  // quadratic in each coordinate's own features is fitted to that share.
  // Basis per sample: [1, s, s^2] (elementwise square), so C comes out
  // diagonal and exactly symmetric.
  const int regressors = 1 + 2 * kStateDim;
  const double share = 1.0 / static_cast<double>(spec.total());

  QuadraticCostModel model;
  model.horizon = horizon;
  model.groups.assign(spec.num_groups(), std::vector<StageCost>(horizon + 1));

  parallel_for(spec.num_groups() * (horizon + 1), [&](int task) {
    const int g = task / (horizon + 1);
    const int t = task % (horizon + 1);
    const CoordinateGroup& group = spec.groups[g];

    int rows = 0;
    for (const auto& traj : samples) {
      if (static_cast<int>(traj.states.size()) > t) rows += group.size();
    }
    const std::string tag = stage_tag("fit_cost", group, t);
    check_pool(rows, regressors, ridge, tag);

    Eigen::MatrixXd design(rows, regressors);
    Eigen::VectorXd targets(rows);
    int row = 0;
    for (const auto& traj : samples) {
      if (static_cast<int>(traj.states.size()) <= t) continue;
      for (int j = group.begin; j < group.end; ++j, ++row) {
        const auto s = traj.states[t].col(j);
        design(row, 0) = 1.0;
        design.row(row).segment(1, kStateDim) = s.transpose();
        design.row(row).segment(1 + kStateDim, kStateDim) = s.array().square().matrix().transpose();
        targets(row) = traj.true_costs[t] * share;
      }
    }

    Eigen::VectorXd coef = ridge_solve(design, targets, ridge, 0, tag);

    StageCost& stage = model.groups[g][t];
    stage.h = coef(0);
    stage.d = coef.segment(1, kStateDim);
    stage.C = (2.0 * coef.segment(1 + kStateDim, kStateDim)).asDiagonal();
  });
  return model;
}

std::vector<std::vector<GaussianConditional>> fit_policy_linearization(
    const std::vector<Trajectory>& samples,
    const std::vector<std::vector<Eigen::VectorXd>>& policy_means,
    const CoordinateGroupSpec& spec, const std::vector<double>& action_var,
    double ridge) {
  if (ridge < 0.0) throw InvalidArgument("fit_policy_linearization: ridge must be >= 0");
  if (policy_means.size() != samples.size()) {
    throw InvalidArgument("fit_policy_linearization: one mean sequence per trajectory required");
  }
  if (static_cast<int>(action_var.size()) != spec.num_groups()) {
    throw InvalidArgument("fit_policy_linearization: one action variance per group required");
  }
  const int horizon = longest_horizon(samples);
  const int regressors = kStateDim + 1;  // [s; 1]

  std::vector<std::vector<GaussianConditional>> fits(
      spec.num_groups(), std::vector<GaussianConditional>(horizon));

  parallel_for(spec.num_groups() * horizon, [&](int task) {
    const int g = task / horizon;
    const int t = task % horizon;
    const CoordinateGroup& group = spec.groups[g];

    int rows = 0;
    for (const auto& traj : samples) {
      if (traj.steps() > t) rows += group.size();
    }
    const std::string tag = stage_tag("fit_policy_linearization", group, t);
    check_pool(rows, regressors, ridge, tag);

    Eigen::MatrixXd design(rows, regressors);
    Eigen::VectorXd targets(rows);
    int row = 0;
    for (std::size_t r = 0; r < samples.size(); ++r) {
      const Trajectory& traj = samples[r];
      if (traj.steps() <= t) continue;
      if (static_cast<int>(policy_means[r].size()) <= t) {
        throw InvalidArgument(tag + ": policy mean sequence shorter than trajectory");
      }
      for (int j = group.begin; j < group.end; ++j, ++row) {
        design.row(row).head(kStateDim) = traj.states[t].col(j).transpose();
        design(row, kStateDim) = 1.0;
        targets(row) = policy_means[r][t](j);
      }
    }

    Eigen::VectorXd coef = ridge_solve(design, targets, ridge, regressors - 1, tag);

    GaussianConditional& fit = fits[g][t];
    fit.gain = coef.head(kStateDim).transpose();
    fit.offset = Eigen::VectorXd::Constant(1, coef(kStateDim));
    const double resid_var = (targets - design * coef).squaredNorm() / static_cast<double>(rows);
    fit.cov = Eigen::MatrixXd::Constant(1, 1, std::max(resid_var + action_var[g], 1e-8));
  });
  return fits;
}

}  // namespace metaopt
