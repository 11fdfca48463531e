#pragma once

#include <Eigen/Core>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "metaopt/optimizer.hpp"
#include "metaopt/problem.hpp"

namespace metaopt {

enum class BaselineAlg { sgd, momentum, cg, lbfgs, adam, adagrad, rmsprop };

BaselineAlg parse_baseline_alg(const std::string& name);
std::string baseline_alg_name(BaselineAlg alg);

struct BaselineConfig {
  BaselineAlg alg = BaselineAlg::sgd;
  double step = 0.1;
  double momentum_beta = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  double adagrad_eps = 1e-8;
  int lbfgs_memory = 10;
};

// Mutable per-run state of one baseline optimizer instance.
struct BaselineState {
  Eigen::VectorXd velocity;      // momentum
  Eigen::VectorXd adam_m, adam_v;
  long long adam_t = 0;
  Eigen::VectorXd adagrad_accum;
  Eigen::VectorXd rms_accum;
  Eigen::VectorXd prev_grad;     // cg / lbfgs
  Eigen::VectorXd prev_dir;      // cg
  Eigen::VectorXd prev_step;     // lbfgs: last Δx actually taken
  std::deque<Eigen::VectorXd> lbfgs_s, lbfgs_y;
  bool has_prev = false;
};

// One update of the chosen algorithm's standard recurrence. `eval_at`, when
// non-null, re-evaluates the current minibatch objective at x + Δ and is used
// by the L-BFGS Armijo backtracking line search. Pure given (config, state).
Eigen::VectorXd baseline_step(const BaselineConfig& config, BaselineState& state,
                              const Eigen::VectorXd& gradient, double value,
                              const Eigen::VectorXd& x, const EvalAtFn& eval_at);

// StepOptimizer adapter around baseline_step.
class BaselineOptimizer : public StepOptimizer {
 public:
  explicit BaselineOptimizer(BaselineConfig config) : config_(config) {}

  void reset(const Problem&, const Eigen::VectorXd&, std::uint64_t) override {
    state_ = BaselineState{};
  }
  Eigen::VectorXd step(const Eigen::VectorXd& x, double value,
                       const Eigen::VectorXd& gradient,
                       const EvalAtFn& eval_at) override {
    return baseline_step(config_, state_, gradient, value, x, eval_at);
  }
  std::string name() const override { return baseline_alg_name(config_.alg); }
  const BaselineConfig& config() const { return config_; }

 private:
  BaselineConfig config_;
  BaselineState state_;
};

struct TuneOptions {
  int horizon = 100;
  std::vector<std::uint64_t> seeds = {17, 29};
  BaselineConfig base;  // non-step fields used as-is
};

// Grid search over step sizes: runs each candidate over the fixed seeds and
// returns the config with the lowest summed meta-loss. Ties break toward the
// smaller step. Throws if every candidate diverges.
BaselineConfig tune_baseline(const Problem& problem, BaselineAlg alg,
                             const std::vector<double>& grid,
                             const TuneOptions& opts = {});

}  // namespace metaopt
