#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

#include "metaopt/problem.hpp"

namespace metaopt {

// Re-evaluates the current step's noisy objective at a candidate iterate
// (same minibatch). Line-searching optimizers use this; others ignore it.
using EvalAtFn = std::function<double(const Eigen::VectorXd&)>;

// A step-based optimizer: given the current iterate and its noisy
// value/gradient, produce an update Δx. Stateful across steps, reset per run.
class StepOptimizer {
 public:
  virtual ~StepOptimizer() = default;

  // Called once at the start of a run, after the initial iterate is drawn.
  // `run_seed` keys any stochasticity the optimizer itself introduces.
  virtual void reset(const Problem& problem, const Eigen::VectorXd& x0,
                     std::uint64_t run_seed) = 0;

  virtual Eigen::VectorXd step(const Eigen::VectorXd& x, double value,
                               const Eigen::VectorXd& gradient,
                               const EvalAtFn& eval_at) = 0;

  virtual std::string name() const = 0;
};

}  // namespace metaopt
