#pragma once

#include <Eigen/Core>
#include <vector>

#include "metaopt/policy.hpp"

namespace metaopt {

// Supervised targets for one coordinate group. Columns index (rollout,
// coordinate) pairs; rows of obs are the kObsDim observation features. Every
// column is a full-horizon sequence starting from zero LSTM memory, exactly
// like a deployment rollout.
struct GroupTrainingData {
  std::vector<Eigen::MatrixXd> obs;        // T entries of kObsDim x M
  std::vector<Eigen::RowVectorXd> target;  // T entries of 1 x M: controller mean actions
  Eigen::VectorXd precision;  // per t: nu_t / G_t, weight of the squared term
  Eigen::VectorXd lambda;     // per t: dual linear term
  Eigen::VectorXd nu;         // per t: constraint weight (variance update)
  Eigen::VectorXd g_var;      // per t: controller variance G_t (variance update)

  int horizon() const { return static_cast<int>(obs.size()); }
  int columns() const { return obs.empty() ? 0 : static_cast<int>(obs[0].cols()); }
};

struct PolicyTrainingSet {
  std::vector<GroupTrainingData> groups;  // one per policy group, same order
};

struct SupervisedConfig {
  int epochs = 15;
  double step = 0.1;
  double momentum = 0.9;
  double min_step = 1e-10;  // step-halving floor before giving up
  int column_chunk = 64;    // BPTT memory cap: columns processed per block
  bool update_variance = true;
};

struct SupervisedReport {
  // Accepted (post-backtracking) loss per epoch, per group, summed.
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int backtracks = 0;
};

// Trains each group's LSTM on its targets by full-horizon backpropagation
// through time with momentum and epoch-level backtracking (revert and halve
// the step when the full-batch loss rises). Also refreshes sigma^2_g from the
// closed-form stationary point sum(nu_t) / sum(nu_t / G_t) when variance
// updates are enabled. Throws NumericalError if halving hits min_step
// without recovering a non-increasing loss.
PolicyParams supervised_update(const PolicyParams& params, const PolicyTrainingSet& data,
                               const SupervisedConfig& config,
                               SupervisedReport* report = nullptr);

// The exact forward pass the supervised loss uses (batched, marginally
// different in the last bit from policy_forward's per-column kernel).
// Exposed so tests can construct fixed points of the loss.
std::vector<Eigen::RowVectorXd> training_forward_means(const GroupPolicy& gp,
                                                       const GroupTrainingData& data);

// Loss value only (no gradient); same definition as supervised_update's
// objective for one group.
double supervised_loss(const GroupPolicy& gp, const GroupTrainingData& data);

}  // namespace metaopt
