#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "metaopt/controller.hpp"
#include "metaopt/policy.hpp"
#include "metaopt/policy_train.hpp"
#include "metaopt/problem.hpp"

namespace metaopt {

struct MetaTrainConfig {
  int horizon = 100;
  int num_rollouts = 5;
  int gps_iterations = 12;
  double epsilon = 1.0;       // per-group KL trust radius (summed over t)
  double alpha = 1.0;         // dual ascent scale
  double nu_init = 0.01;
  double nu_mult_up = 2.0;
  double nu_mult_down = 0.5;
  double init_step = 0.01;    // initial controller step and exploration scale
  double ridge = 1e-6;        // relative ridge for all trajectory regressions
  int policy_hidden = 64;
  SupervisedConfig supervised;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty disables checkpointing

  void validate() const;  // throws InvalidArgument
};

// Alternation state. Duals and constraint weights are per (group, t) with the
// action dimension being 1 per coordinate, so scalars per entry.
struct BadmmState {
  LinearGaussianController psi;
  PolicyParams theta;
  std::vector<Eigen::VectorXd> lambda;   // [group](t)
  std::vector<Eigen::VectorXd> nu;       // [group](t), > 0
  std::vector<double> prev_pi_psi_kl;    // [group], NaN before first iteration
  double epsilon = 1.0;                  // may shrink on divergence retries
  int iteration = 0;
  std::vector<double> meta_loss_history;  // deterministic policy rollout, entry 0 = initial theta
  double best_meta_loss = 0.0;
  PolicyParams best_theta;
};

struct GpsIterationInfo {
  int excluded_rollouts = 0;
  bool retried_sampling = false;
  std::vector<double> achieved_kl;  // per group, trust-region KL of the accepted controller
  std::vector<int> damped;          // per group, 1 if the dual search hit its bracket edge
  std::vector<double> pi_psi_kl;    // per group, sampled policy-to-controller KL
  SupervisedReport supervised;
  double policy_meta_loss = 0.0;    // after this iteration's updates
  double sample_meta_loss = 0.0;    // mean over this iteration's surviving rollouts
};

BadmmState init_badmm_state(const MetaTrainConfig& config, const Problem& problem);

// Sum of true objective values over iterations 1..T ("area under the curve").
// Diverged or truncated runs score +infinity.
double meta_loss(const Trajectory& traj);
double meta_loss(const PsdRun& run, int horizon);

// One alternation cycle: sample under the controller, fit local models, solve
// the trust-region controller update per group, distill the controller into
// the policy, then update the duals and constraint weights from sample means.
BadmmState gps_iterate(BadmmState state, const Problem& problem,
                       const MetaTrainConfig& config, GpsIterationInfo* info = nullptr);

// Full meta-training run. Returns the policy with the best recorded
// deterministic-rollout meta-loss (the initial policy counts). Writes a
// checkpoint every iteration when configured and resumes from one if present.
PolicyParams meta_train(const MetaTrainConfig& config, const Problem& problem,
                        std::vector<GpsIterationInfo>* trace = nullptr);

}  // namespace metaopt
