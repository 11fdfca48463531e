#include "metaopt/controller.hpp"

#include <cmath>
#include <ostream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {
namespace {

constexpr std::uint64_t kControllerNoiseTag = 0x63747231ULL;  // "ctr1"
constexpr std::uint64_t kRolloutNoiseTag = 0x726f6cULL;       // "rol"

}  // namespace

LinearGaussianController init_controller(const CoordinateGroupSpec& spec, int horizon,
                                         double init_step) {
  if (horizon < 1) throw InvalidArgument("init_controller: horizon must be >= 1");
  if (!(init_step > 0)) throw InvalidArgument("init_controller: init_step must be > 0");
  if (spec.num_groups() == 0) throw InvalidArgument("init_controller: empty group spec");
  LinearGaussianController psi;
  psi.horizon = horizon;
  for (int g = 0; g < spec.num_groups(); ++g) {
    ControllerGroup cg;
    cg.K.setZero(horizon, kStateDim);
    cg.K.col(kGradFeatureRow).setConstant(-init_step);
    cg.k.setZero(horizon);
    cg.G.setConstant(horizon, init_step * init_step);
    psi.groups.push_back(std::move(cg));
  }
  return psi;
}

Trajectory rollout(const Problem& problem, const RolloutActor& actor,
                   const Eigen::VectorXd& x0, int horizon, std::uint64_t noise_seed) {
  int actors = (actor.controller != nullptr) + (actor.policy != nullptr) +
               (actor.optimizer != nullptr);
  if (actors != 1) throw InvalidArgument("rollout: exactly one actor must be set");
  if (horizon < 1) throw InvalidArgument("rollout: horizon must be >= 1");
  if (!x0.allFinite()) throw InvalidArgument("rollout: x0 must be finite");
  const CoordinateGroupSpec& spec = problem.groups();
  const int P = problem.param_count();
  if (x0.size() != P) throw InvalidArgument("rollout: x0 length mismatch");
  if (actor.controller && actor.controller->horizon < horizon)
    throw InvalidArgument("rollout: controller horizon too short");

  Trajectory traj;
  History history(P);
  PolicyMemory memory;
  if (actor.policy) memory = zero_memory(*actor.policy, spec);
  if (actor.optimizer) actor.optimizer->reset(problem, x0, noise_seed);

  Eigen::VectorXd x = x0;
  for (int t = 0; t <= horizon; ++t) {
    EvalResult ev;
    double cost;
    try {
      ev = problem.noisy_eval(x, t);
      cost = problem.true_eval(x);
    } catch (const NumericalError& e) {
      traj.diverged = true;
      traj.divergence_note = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
    history.push(x, ev.gradient, ev.value);
    traj.states.push_back(state_features(history).values);
    traj.observations.push_back(observation_features(history).values);
    traj.true_costs.push_back(cost);
    traj.noisy_values.push_back(ev.value);
    traj.iterates.push_back(x);
    traj.gradients.push_back(ev.gradient);
    if (t == horizon) break;

    Eigen::VectorXd action(P);
    if (actor.controller) {
      Rng rng(Rng::mix(noise_seed, kControllerNoiseTag, static_cast<std::uint64_t>(t)));
      const Eigen::MatrixXd& s = traj.states.back();
      for (int g = 0; g < spec.num_groups(); ++g) {
        const ControllerGroup& cg = actor.controller->groups[g];
        double sigma = std::sqrt(cg.G[t]);
        const CoordinateGroup& grp = spec.groups[g];
        for (int coord = grp.begin; coord < grp.end; ++coord)
          action[coord] = cg.K.row(t).dot(s.col(coord)) + cg.k[t] + sigma * rng.normal();
      }
    } else if (actor.policy) {
      action = policy_step(*actor.policy, spec, memory, traj.observations.back());
      if (actor.policy_mode == PsdMode::stochastic) {
        Rng rng(Rng::mix(noise_seed, kControllerNoiseTag, static_cast<std::uint64_t>(t)));
        action = sample_action(*actor.policy, spec, action, rng);
      }
    } else {
      EvalAtFn eval_at = [&](const Eigen::VectorXd& cand) {
        return problem.noisy_eval(cand, t).value;
      };
      action = actor.optimizer->step(x, ev.value, ev.gradient, eval_at);
    }

    traj.actions.push_back(action);
    x += action;
    if (!x.allFinite()) {
      traj.diverged = true;
      traj.divergence_note =
          "step " + std::to_string(t + 1) + ": iterate became non-finite";
      break;
    }
  }
  return traj;
}

SampleSet collect_samples(const Problem& problem, const LinearGaussianController& psi,
                          const std::vector<std::uint64_t>& x0_seeds, int horizon,
                          std::uint64_t noise_salt) {
  const int num_rollouts = static_cast<int>(x0_seeds.size());
  if (num_rollouts < 2) throw InvalidArgument("collect_samples: need >= 2 rollouts");

  std::vector<Trajectory> raw(num_rollouts);
  parallel_for(num_rollouts, [&](int r) {
    Eigen::VectorXd x0 = problem.init_iterate(x0_seeds[r]);
    RolloutActor actor;
    actor.controller = &psi;
    std::uint64_t noise_seed =
        Rng::mix(x0_seeds[r], kRolloutNoiseTag, static_cast<std::uint64_t>(r), noise_salt);
    raw[r] = rollout(problem, actor, x0, horizon, noise_seed);
    raw[r].x0_seed = x0_seeds[r];
  });

  SampleSet out;
  for (auto& traj : raw) {
    if (traj.diverged || traj.steps() < horizon)
      ++out.excluded;
    else
      out.trajectories.push_back(std::move(traj));
  }
  if (out.trajectories.empty())
    throw NumericalError(
        "collect_samples: every rollout diverged; reduce init_step or the "
        "controller variance");
  return out;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "t,coord";
  for (int i = 0; i < kStateDim; ++i) out << ",state_" << i;
  for (int i = 0; i < kObsDim; ++i) out << ",obs_" << i;
  out << ",action,cost\n";
  const int P = traj.states.empty() ? 0 : static_cast<int>(traj.states[0].cols());
  for (size_t t = 0; t < traj.states.size(); ++t) {
    for (int c = 0; c < P; ++c) {
      out << t << "," << c;
      for (int i = 0; i < kStateDim; ++i)
        out << "," << format_double(traj.states[t](i, c));
      for (int i = 0; i < kObsDim; ++i)
        out << "," << format_double(traj.observations[t](i, c));
      out << ",";
      if (t < traj.actions.size()) out << format_double(traj.actions[t][c]);
      out << "," << format_double(traj.true_costs[t]) << "\n";
    }
  }
}

}  // namespace metaopt
