#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "metaopt/features.hpp"
#include "metaopt/optimizer.hpp"
#include "metaopt/problem.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {

// Single-layer LSTM weights shared by every coordinate in one group, plus a
// scalar output head and the group's action variance (one diagonal block of
// the policy covariance). Gate rows are stacked [input; forget; cell; output].
struct GroupPolicy {
  std::string name;
  std::string kind;  // "weight" / "bias", used for cross-problem transfer
  int hidden = 0;
  Eigen::MatrixXd w_input;  // 4H x kObsDim
  Eigen::MatrixXd w_recur;  // 4H x H
  Eigen::VectorXd bias;     // 4H
  Eigen::VectorXd w_out;    // H
  double b_out = 0.0;
  double out_scale = 0.0;   // learned output gain
  double action_var = 0.0;  // sigma^2 of the group's step distribution
};

struct PolicyParams {
  std::vector<GroupPolicy> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
  bool kinds_match(const CoordinateGroupSpec& spec) const;
};

// Per-coordinate LSTM state, stored as H x n_g matrices per group
// (column = coordinate, in group-local order).
struct PolicyMemory {
  std::vector<Eigen::MatrixXd> h, c;
};

PolicyMemory zero_memory(const PolicyParams& params, const CoordinateGroupSpec& spec);

PolicyParams init_policy(const CoordinateGroupSpec& spec, int hidden, std::uint64_t seed);

// One recurrent update for every coordinate. `obs` is kObsDim x P over all
// coordinates (global order); returns the per-coordinate mean step.
//
// Each coordinate's column is processed by an identical per-column kernel, so
// coordinates with bitwise-equal observations and memory produce bitwise-equal
// actions regardless of their position. Keep it that way; a batched matrix
// product would break that guarantee.
Eigen::VectorXd policy_step(const PolicyParams& params, const CoordinateGroupSpec& spec,
                            PolicyMemory& memory, const Eigen::MatrixXd& obs);

// Convenience: mean-step sequences for a recorded observation sequence
// (obs_seq[t] is kObsDim x P), starting from zero memory.
std::vector<Eigen::VectorXd> policy_forward(const PolicyParams& params,
                                            const CoordinateGroupSpec& spec,
                                            const std::vector<Eigen::MatrixXd>& obs_seq);

// mean + sigma_g * standard normal, drawn per coordinate in global order.
Eigen::VectorXd sample_action(const PolicyParams& params, const CoordinateGroupSpec& spec,
                              const Eigen::VectorXd& mean_action, Rng& rng);

enum class PsdMode { deterministic, stochastic };

struct PsdRun {
  std::vector<double> true_values;   // per recorded iterate, index = iteration
  std::vector<double> noisy_values;
  std::vector<Eigen::VectorXd> iterates;
  bool diverged = false;
  std::string divergence_note;
};

// Rolls the trained policy out as an optimizer ("Predicted Step Descent"):
// x_{t+1} = x_t + a_t with a_t the policy mean (deterministic mode) or a
// Gaussian sample (stochastic mode, noise keyed by `noise_seed` and t).
PsdRun run_psd(const Problem& problem, const PolicyParams& params,
               const Eigen::VectorXd& x0, int horizon, PsdMode mode,
               std::uint64_t noise_seed = 0);

// StepOptimizer adapter so the deployed policy slots into the benchmark
// harness next to the baselines.
class PsdOptimizer : public StepOptimizer {
 public:
  PsdOptimizer(PolicyParams params, PsdMode mode = PsdMode::deterministic);

  void reset(const Problem& problem, const Eigen::VectorXd& x0,
             std::uint64_t run_seed) override;
  Eigen::VectorXd step(const Eigen::VectorXd& x, double value,
                       const Eigen::VectorXd& gradient, const EvalAtFn& eval_at) override;
  std::string name() const override { return "psd"; }

 private:
  PolicyParams params_;
  PsdMode mode_;
  const CoordinateGroupSpec* spec_ = nullptr;
  std::unique_ptr<History> history_;
  PolicyMemory memory_;
  std::uint64_t run_seed_ = 0;
  std::int64_t t_ = 0;
};

// MOPTPI1 container, raw little-endian f64 weights.
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace metaopt
