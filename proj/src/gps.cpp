#include "metaopt/gps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "metaopt/checkpoint.hpp"
#include "metaopt/errors.hpp"
#include "metaopt/lqg.hpp"
#include "metaopt/model_fit.hpp"
#include "metaopt/num.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {
namespace {

constexpr std::uint64_t kX0Tag = 0x67707378;
constexpr std::uint64_t kPolicyInitTag = 0x706f6c69;
constexpr std::uint64_t kEvalTag = 0x6576616c;
constexpr std::uint64_t kRetryTag = 0x72657472;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::uint64_t> rollout_seeds(const MetaTrainConfig& config) {
  std::vector<std::uint64_t> seeds(config.num_rollouts);
  for (int r = 0; r < config.num_rollouts; ++r) {
    seeds[r] = Rng::mix(config.seed, kX0Tag, static_cast<std::uint64_t>(r));
  }
  return seeds;
}

// Policy mean actions along each recorded trajectory, replaying the stored
// observations from zero memory.
std::vector<std::vector<Eigen::VectorXd>> policy_means_on(
    const std::vector<Trajectory>& samples, const PolicyParams& theta,
    const CoordinateGroupSpec& spec) {
  std::vector<std::vector<Eigen::VectorXd>> means(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int r) {
    const Trajectory& traj = samples[r];
    std::vector<Eigen::MatrixXd> obs(traj.observations.begin(),
                                     traj.observations.begin() + traj.steps());
    means[r] = policy_forward(theta, spec, obs);
  });
  return means;
}

LqgSubproblem build_subproblem(int g, int T, const CoordinateGroupSpec& spec,
                               const DynamicsModel& dyn, const QuadraticCostModel& cost,
                               const BadmmState& state,
                               const std::vector<std::vector<GaussianConditional>>& pi_fit,
                               const std::vector<Trajectory>& samples) {
  const CoordinateGroup& group = spec.groups[g];
  const ControllerGroup& cg = state.psi.groups[g];

  LqgSubproblem sub;
  sub.horizon = T;
  sub.epsilon = state.epsilon;
  sub.stages.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    LqgStage& st = sub.stages[t];
    st.C = cost.groups[g][t].C;
    st.d = cost.groups[g][t].d;
    st.h = cost.groups[g][t].h;
    if (t == T) continue;
    st.A = dyn.groups[g][t].A;
    st.B = dyn.groups[g][t].B;
    st.c = dyn.groups[g][t].c;
    st.F = dyn.groups[g][t].F;
    st.lambda = Eigen::VectorXd::Constant(1, state.lambda[g](t));
    st.nu = state.nu[g](t);
    st.policy_prior = pi_fit[g][t];
    st.prev.gain = cg.K.row(t);
    st.prev.offset = Eigen::VectorXd::Constant(1, cg.k(t));
    st.prev.cov = Eigen::MatrixXd::Constant(1, 1, cg.G(t));
  }

  int cols = 0;
  for (const auto& traj : samples) {
    (void)traj;
    cols += group.size();
  }
  Eigen::MatrixXd s0(kStateDim, cols);
  int col = 0;
  for (const auto& traj : samples) {
    for (int j = group.begin; j < group.end; ++j, ++col) s0.col(col) = traj.states[0].col(j);
  }
  sub.init_mean = s0.rowwise().mean();
  Eigen::MatrixXd centered = s0.colwise() - sub.init_mean;
  sub.init_cov = (centered * centered.transpose()) / static_cast<double>(cols);
  return sub;
}

// Empirical trust-region divergence: sum over t of the mean one-dimensional
// KL(next || prev) across the group's coordinates on the sampled states.
double sampled_group_kl(const ControllerGroup& next, const ControllerGroup& prev,
                        const std::vector<Trajectory>& samples,
                        const CoordinateGroup& group, int T) {
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    double acc = 0.0;
    int n = 0;
    const double ratio = next.G(t) / prev.G(t);
    for (const auto& traj : samples) {
      for (int j = group.begin; j < group.end; ++j, ++n) {
        const auto s = traj.states[t].col(j);
        const double dm = (next.K.row(t).dot(s) + next.k(t)) - (prev.K.row(t).dot(s) + prev.k(t));
        acc += 0.5 * (ratio + dm * dm / prev.G(t) - 1.0 - std::log(ratio));
      }
    }
    total += acc / n;
  }
  return total;
}

PolicyTrainingSet build_training_set(const std::vector<Trajectory>& samples,
                                     const CoordinateGroupSpec& spec,
                                     const LinearGaussianController& next_psi,
                                     const BadmmState& state) {
  const int T = next_psi.horizon;
  PolicyTrainingSet train;
  train.groups.resize(spec.num_groups());
  for (int g = 0; g < spec.num_groups(); ++g) {
    const CoordinateGroup& group = spec.groups[g];
    const ControllerGroup& cg = next_psi.groups[g];
    const int cols = static_cast<int>(samples.size()) * group.size();

    GroupTrainingData& data = train.groups[g];
    data.obs.assign(T, Eigen::MatrixXd(kObsDim, cols));
    data.target.assign(T, Eigen::RowVectorXd(cols));
    data.precision.resize(T);
    data.lambda.resize(T);
    data.nu.resize(T);
    data.g_var.resize(T);
    for (int t = 0; t < T; ++t) {
      int col = 0;
      for (const auto& traj : samples) {
        for (int j = group.begin; j < group.end; ++j, ++col) {
          data.obs[t].col(col) = traj.observations[t].col(j);
          data.target[t](col) = cg.K.row(t).dot(traj.states[t].col(j)) + cg.k(t);
        }
      }
      data.precision(t) = state.nu[g](t) / cg.G(t);
      data.lambda(t) = state.lambda[g](t);
      data.nu(t) = state.nu[g](t);
      data.g_var(t) = cg.G(t);
    }
  }
  return train;
}

}  // namespace

void MetaTrainConfig::validate() const {
  if (horizon < 1) throw InvalidArgument("meta-train config: horizon must be >= 1");
  if (num_rollouts < 2) throw InvalidArgument("meta-train config: num_rollouts must be >= 2");
  if (gps_iterations < 0) throw InvalidArgument("meta-train config: gps_iterations must be >= 0");
  if (!(epsilon > 0.0)) throw InvalidArgument("meta-train config: epsilon must be > 0");
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw InvalidArgument("meta-train config: alpha must be in (0, 1]");
  }
  if (!(nu_init > 0.0)) throw InvalidArgument("meta-train config: nu_init must be > 0");
  if (!(nu_mult_up > 0.0) || !(nu_mult_down > 0.0)) {
    throw InvalidArgument("meta-train config: nu multipliers must be > 0");
  }
  if (!(init_step > 0.0)) throw InvalidArgument("meta-train config: init_step must be > 0");
  if (ridge < 0.0) throw InvalidArgument("meta-train config: ridge must be >= 0");
  if (policy_hidden < 1) throw InvalidArgument("meta-train config: policy_hidden must be >= 1");
  if (supervised.epochs < 1) throw InvalidArgument("meta-train config: supervised epochs must be >= 1");
  if (!(supervised.step > 0.0)) throw InvalidArgument("meta-train config: supervised step must be > 0");
}

double meta_loss(const Trajectory& traj) {
  if (traj.diverged) return kInf;
  double acc = 0.0;
  for (std::size_t t = 1; t < traj.true_costs.size(); ++t) acc += traj.true_costs[t];
  return std::isfinite(acc) ? acc : kInf;
}

double meta_loss(const PsdRun& run, int horizon) {
  if (run.diverged || static_cast<int>(run.true_values.size()) < horizon + 1) return kInf;
  double acc = 0.0;
  for (int t = 1; t <= horizon; ++t) acc += run.true_values[t];
  return std::isfinite(acc) ? acc : kInf;
}

BadmmState init_badmm_state(const MetaTrainConfig& config, const Problem& problem) {
  config.validate();
  const CoordinateGroupSpec& spec = problem.groups();

  BadmmState state;
  state.psi = init_controller(spec, config.horizon, config.init_step);
  state.theta = init_policy(spec, config.policy_hidden, Rng::mix(config.seed, kPolicyInitTag));
  state.lambda.assign(spec.num_groups(), Eigen::VectorXd::Zero(config.horizon));
  state.nu.assign(spec.num_groups(), Eigen::VectorXd::Constant(config.horizon, config.nu_init));
  state.prev_pi_psi_kl.assign(spec.num_groups(), std::numeric_limits<double>::quiet_NaN());
  state.epsilon = config.epsilon;

  const Eigen::VectorXd x0 = problem.init_iterate(Rng::mix(config.seed, kEvalTag));
  const PsdRun eval = run_psd(problem, state.theta, x0, config.horizon, PsdMode::deterministic);
  state.meta_loss_history.push_back(meta_loss(eval, config.horizon));
  state.best_meta_loss = state.meta_loss_history.front();
  state.best_theta = state.theta;
  return state;
}

BadmmState gps_iterate(BadmmState state, const Problem& problem,
                       const MetaTrainConfig& config, GpsIterationInfo* info) {
  config.validate();
  const CoordinateGroupSpec& spec = problem.groups();
  const int T = config.horizon;
  const int G = spec.num_groups();
  if (state.psi.horizon != T) {
    throw InvalidArgument("gps_iterate: controller horizon does not match the config");
  }

  GpsIterationInfo scratch;
  GpsIterationInfo& out = info ? *info : scratch;
  out = GpsIterationInfo{};

  const std::vector<std::uint64_t> seeds = rollout_seeds(config);
  const std::uint64_t salt = static_cast<std::uint64_t>(state.iteration) + 1;
  SampleSet samples;
  try {
    samples = collect_samples(problem, state.psi, seeds, T, salt);
  } catch (const NumericalError&) {
    out.retried_sampling = true;
    state.epsilon *= 0.5;
    for (auto& cg : state.psi.groups) {
      cg.K *= 0.5;
      cg.k *= 0.5;
      cg.G *= 0.25;
    }
    try {
      samples = collect_samples(problem, state.psi, seeds, T, Rng::mix(salt, kRetryTag));
    } catch (const NumericalError& e) {
      throw NumericalError(
          std::string("gps_iterate: sampling still diverged after halving the controller "
                      "and trust radius; ") +
          e.what());
    }
  }
  out.excluded_rollouts = samples.excluded;
  {
    double acc = 0.0;
    for (const auto& traj : samples.trajectories) acc += meta_loss(traj);
    out.sample_meta_loss = acc / static_cast<double>(samples.trajectories.size());
  }

  const DynamicsModel dyn = fit_dynamics(samples.trajectories, spec, config.ridge);
  const QuadraticCostModel cost = fit_cost(samples.trajectories, spec, config.ridge);

  std::vector<double> action_var(G);
  for (int g = 0; g < G; ++g) action_var[g] = state.theta.groups[g].action_var;
  const auto pre_means = policy_means_on(samples.trajectories, state.theta, spec);
  const auto pi_fit = fit_policy_linearization(samples.trajectories, pre_means, spec,
                                               action_var, config.ridge);

  // Controller update. solve_eta bounds the KL predicted under the fitted
  // dynamics; re-solve with a shrunk radius until the estimate on the actual
  // samples also honors the radius.
  LinearGaussianController next_psi = state.psi;
  out.achieved_kl.assign(G, 0.0);
  out.damped.assign(G, 0);
  parallel_for(G, [&](int g) {
    LqgSubproblem sub =
        build_subproblem(g, T, spec, dyn, cost, state, pi_fit, samples.trajectories);
    LqgSolution sol = solve_eta(sub);
    ControllerGroup& cg = next_psi.groups[g];
    auto adopt = [&](const LqgSolution& s) {
      for (int t = 0; t < T; ++t) {
        cg.K.row(t) = s.controller[t].gain;
        cg.k(t) = s.controller[t].offset(0);
        cg.G(t) = s.controller[t].cov(0, 0);
      }
    };
    adopt(sol);
    double kl = sampled_group_kl(cg, state.psi.groups[g], samples.trajectories,
                                 spec.groups[g], T);
    for (int shrink = 0; kl > state.epsilon && shrink < 10; ++shrink) {
      sub.epsilon *= 0.5;
      sol = solve_eta(sub);
      adopt(sol);
      kl = sampled_group_kl(cg, state.psi.groups[g], samples.trajectories,
                            spec.groups[g], T);
    }
    out.achieved_kl[g] = kl;
    out.damped[g] = sol.damped_warning ? 1 : 0;
  });

  const PolicyTrainingSet train = build_training_set(samples.trajectories, spec, next_psi, state);
  PolicyParams next_theta = supervised_update(state.theta, train, config.supervised,
                                              &out.supervised);

  // Dual ascent on the mean-action consensus gap, then the per-group
  // constraint weight schedule driven by the sampled policy-controller KL.
  const auto post_means = policy_means_on(samples.trajectories, next_theta, spec);
  out.pi_psi_kl.assign(G, 0.0);
  for (int g = 0; g < G; ++g) {
    const CoordinateGroup& group = spec.groups[g];
    const ControllerGroup& cg = next_psi.groups[g];
    const double sigma2 = next_theta.groups[g].action_var;
    double kl_total = 0.0;
    for (int t = 0; t < T; ++t) {
      double gap = 0.0;
      double kl_acc = 0.0;
      int n = 0;
      const double ratio = sigma2 / cg.G(t);
      for (std::size_t r = 0; r < samples.trajectories.size(); ++r) {
        const Trajectory& traj = samples.trajectories[r];
        for (int j = group.begin; j < group.end; ++j, ++n) {
          const double mu_pi = post_means[r][t](j);
          const double mu_psi = cg.K.row(t).dot(traj.states[t].col(j)) + cg.k(t);
          gap += mu_pi - mu_psi;
          kl_acc += 0.5 * (ratio + (mu_pi - mu_psi) * (mu_pi - mu_psi) / cg.G(t) - 1.0 -
                           std::log(ratio));
        }
      }
      state.lambda[g](t) += config.alpha * state.nu[g](t) * (gap / n);
      kl_total += kl_acc / n;
    }
    out.pi_psi_kl[g] = kl_total;

    const double prev = state.prev_pi_psi_kl[g];
    if (!std::isnan(prev)) {
      if (kl_total > prev) {
        state.nu[g] *= config.nu_mult_up;
      } else if (kl_total < 0.1 * state.epsilon) {
        state.nu[g] *= config.nu_mult_down;
      }
    }
    state.prev_pi_psi_kl[g] = kl_total;
  }

  const Eigen::VectorXd x0 = problem.init_iterate(Rng::mix(config.seed, kEvalTag));
  const PsdRun eval = run_psd(problem, next_theta, x0, T, PsdMode::deterministic);
  out.policy_meta_loss = meta_loss(eval, T);

  state.psi = std::move(next_psi);
  state.theta = std::move(next_theta);
  state.meta_loss_history.push_back(out.policy_meta_loss);
  if (out.policy_meta_loss < state.best_meta_loss) {
    state.best_meta_loss = out.policy_meta_loss;
    state.best_theta = state.theta;
  }
  state.iteration += 1;
  return state;
}

PolicyParams meta_train(const MetaTrainConfig& config, const Problem& problem,
                        std::vector<GpsIterationInfo>* trace) {
  config.validate();

  BadmmState state;
  if (!config.checkpoint_dir.empty() && checkpoint_exists(config.checkpoint_dir)) {
    state = load_checkpoint(config.checkpoint_dir, config, problem.name());
  } else {
    state = init_badmm_state(config, problem);
    if (!config.checkpoint_dir.empty()) {
      save_checkpoint(config.checkpoint_dir, state, config, problem.name());
    }
  }

  while (state.iteration < config.gps_iterations) {
    GpsIterationInfo step_info;
    try {
      state = gps_iterate(std::move(state), problem, config, &step_info);
    } catch (const Error& e) {
      if (config.checkpoint_dir.empty()) throw;
      throw Error(std::string(e.what()) + "; last checkpoint: " + config.checkpoint_dir);
    }
    if (trace) trace->push_back(step_info);
    if (!config.checkpoint_dir.empty()) {
      save_checkpoint(config.checkpoint_dir, state, config, problem.name());
    }
  }
  return state.best_theta;
}

}  // namespace metaopt
