#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "metaopt/features.hpp"
#include "metaopt/optimizer.hpp"
#include "metaopt/policy.hpp"
#include "metaopt/problem.hpp"

namespace metaopt {

// Time-varying linear-Gaussian controller: per group g and timestep t the
// action on each coordinate j in the group is
//   a_t^j ~ N(K_t^g . s_t^j + k_t^g, G_t^g)
// with s_t^j that coordinate's kStateDim feature vector.
struct ControllerGroup {
  Eigen::MatrixXd K;  // T x kStateDim gain rows
  Eigen::VectorXd k;  // T offsets
  Eigen::VectorXd G;  // T variances, > 0
};

struct LinearGaussianController {
  int horizon = 0;
  std::vector<ControllerGroup> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
};

// Initial controller: mean action = -init_step * (current normalized average
// gradient feature), i.e. noisy normalized gradient descent, with variance
// init_step^2.
LinearGaussianController init_controller(const CoordinateGroupSpec& spec, int horizon,
                                         double init_step);

// One sampled optimization trace with everything the model fits need.
struct Trajectory {
  std::vector<Eigen::MatrixXd> states;        // T+1 entries, kStateDim x P
  std::vector<Eigen::MatrixXd> observations;  // T+1 entries, kObsDim x P
  std::vector<Eigen::VectorXd> actions;       // T entries, length P
  std::vector<double> true_costs;             // T+1 entries, f(x_t)
  std::vector<double> noisy_values;           // T+1 entries, f_hat(x_t)
  std::vector<Eigen::VectorXd> iterates;      // T+1 entries, raw x_t
  std::vector<Eigen::VectorXd> gradients;     // T+1 entries, raw noisy gradients
  bool diverged = false;
  std::string divergence_note;
  std::uint64_t x0_seed = 0;

  int steps() const { return static_cast<int>(actions.size()); }
};

// What drives the rollout: exactly one of the three must be set.
struct RolloutActor {
  const LinearGaussianController* controller = nullptr;
  const PolicyParams* policy = nullptr;
  PsdMode policy_mode = PsdMode::stochastic;
  StepOptimizer* optimizer = nullptr;
};

// Alternates feature computation, action draw, iterate update; records the
// full trace. Action noise is keyed by (noise_seed, t). Non-finite iterates
// or objective overflow truncate the trajectory and set `diverged`.
Trajectory rollout(const Problem& problem, const RolloutActor& actor,
                   const Eigen::VectorXd& x0, int horizon, std::uint64_t noise_seed);

struct SampleSet {
  std::vector<Trajectory> trajectories;
  int excluded = 0;  // diverged rollouts dropped
};

// Independent controller rollouts from per-rollout x0 seeds. Diverged
// trajectories are excluded (counted); throws NumericalError if none survive.
// `noise_salt` varies the action noise without moving the starting points
// (the outer loop passes its iteration count).
SampleSet collect_samples(const Problem& problem, const LinearGaussianController& psi,
                          const std::vector<std::uint64_t>& x0_seeds, int horizon,
                          std::uint64_t noise_salt = 0);

// Debug dump: columns t, coord, state_0..76, obs_0..2, action, cost. The
// terminal row of each coordinate has an empty action field. Doubles are
// rendered shortest-round-trip, so parsing the dump back is lossless.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

}  // namespace metaopt
