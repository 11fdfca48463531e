#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>

#include "metaopt/dataset.hpp"
#include "metaopt/mlp.hpp"

namespace metaopt {

struct EvalResult {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

// An optimization problem exposed to optimizers as an opaque coordinate
// vector plus noisy (minibatch) and true (holdout) objective oracles.
// Evaluations are deterministic functions of (x, step) so that two runs with
// the same seeds see exactly the same noise.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual int param_count() const = 0;
  virtual const CoordinateGroupSpec& groups() const = 0;
  virtual std::string name() const = 0;

  // Random starting iterate for one run/rollout.
  virtual Eigen::VectorXd init_iterate(std::uint64_t seed) const = 0;

  // Noisy objective and gradient at x, using the minibatch keyed by `step`.
  virtual EvalResult noisy_eval(const Eigen::VectorXd& x, std::int64_t step) const = 0;

  // Lower-variance objective used for reporting and meta-training targets.
  virtual double true_eval(const Eigen::VectorXd& x) const = 0;

  // Hash of the minibatch example indices used at `step`. Two optimizers
  // benchmarked on the same problem must see identical fingerprints.
  virtual std::uint64_t minibatch_fingerprint(std::int64_t step) const { return 0; }
};

// Softmax-classifier training problem over a fixed dataset. The noisy oracle
// draws `minibatch_size` examples (with replacement) per step; the true
// oracle evaluates a fixed holdout subsample drawn once at construction.
class TrainingProblem : public Problem {
 public:
  TrainingProblem(Dataset dataset, MlpArchitecture arch, int minibatch_size,
                  int holdout_batch_size, std::uint64_t rng_seed,
                  std::string name = "");

  int param_count() const override { return arch_.param_count(); }
  const CoordinateGroupSpec& groups() const override { return groups_; }
  std::string name() const override { return name_; }
  const MlpArchitecture& architecture() const { return arch_; }
  const Dataset& dataset() const { return dataset_; }
  int minibatch_size() const { return minibatch_size_; }
  std::uint64_t rng_seed() const { return rng_seed_; }

  Eigen::VectorXd init_iterate(std::uint64_t seed) const override;
  EvalResult noisy_eval(const Eigen::VectorXd& x, std::int64_t step) const override;
  double true_eval(const Eigen::VectorXd& x) const override;
  std::uint64_t minibatch_fingerprint(std::int64_t step) const override;

 private:
  void minibatch_indices(std::int64_t step, std::vector<int>& out) const;

  Dataset dataset_;
  MlpArchitecture arch_;
  CoordinateGroupSpec groups_;
  int minibatch_size_;
  std::uint64_t rng_seed_;
  std::string name_;
  std::vector<int> holdout_;  // fixed example indices for true_eval
};

struct DigitsProblemOptions {
  int hidden_dim = 8;
  Activation activation = Activation::relu;
  int minibatch_size = 64;
  int holdout_batch_size = 1024;
  bool identity_projection = false;  // test hook, forwarded to project_dataset
  std::string name;
};

// Projects the source dataset to proj_dim random features, z-scores it and
// wraps it in a small MLP training problem.
TrainingProblem make_projected_digits_problem(const Dataset& source, int proj_dim,
                                              std::uint64_t seed,
                                              const DigitsProblemOptions& opts = {});

// Fresh Xavier-style start: weights N(0, 1/fan_in), biases zero.
Eigen::VectorXd init_iterate(const Problem& problem, std::uint64_t seed);

}  // namespace metaopt
