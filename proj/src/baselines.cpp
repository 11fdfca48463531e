#include "metaopt/baselines.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

constexpr double kCurvatureFloor = 1e-10;

Eigen::VectorXd lbfgs_direction(const BaselineState& st, const Eigen::VectorXd& g) {
  int m = static_cast<int>(st.lbfgs_s.size());
  if (m == 0) return -g;
  std::vector<double> alpha(m), rho(m);
  Eigen::VectorXd q = g;
  // newest pair is at the back
  for (int i = m - 1; i >= 0; --i) {
    rho[i] = 1.0 / st.lbfgs_y[i].dot(st.lbfgs_s[i]);
    alpha[i] = rho[i] * st.lbfgs_s[i].dot(q);
    q -= alpha[i] * st.lbfgs_y[i];
  }
  double gamma = st.lbfgs_s[m - 1].dot(st.lbfgs_y[m - 1]) /
                 st.lbfgs_y[m - 1].squaredNorm();
  Eigen::VectorXd r = gamma * q;
  for (int i = 0; i < m; ++i) {
    double beta = rho[i] * st.lbfgs_y[i].dot(r);
    r += (alpha[i] - beta) * st.lbfgs_s[i];
  }
  return -r;
}

// Backtracking Armijo on the current minibatch objective.
Eigen::VectorXd armijo_step(const Eigen::VectorXd& x, double value,
                            const Eigen::VectorXd& g, const Eigen::VectorXd& d,
                            double alpha0, const EvalAtFn& eval_at) {
  if (!eval_at) return alpha0 * d;
  const double c1 = 1e-4;
  double slope = g.dot(d);
  double alpha = alpha0;
  for (int k = 0; k < 30; ++k) {
    double f_trial = eval_at(x + alpha * d);
    if (std::isfinite(f_trial) && f_trial <= value + c1 * alpha * slope)
      return alpha * d;
    alpha *= 0.5;
  }
  return alpha * d;  // essentially a no-op step; caller sees it as stalled
}

}  // namespace

BaselineAlg parse_baseline_alg(const std::string& name) {
  if (name == "sgd") return BaselineAlg::sgd;
  if (name == "momentum") return BaselineAlg::momentum;
  if (name == "cg") return BaselineAlg::cg;
  if (name == "lbfgs") return BaselineAlg::lbfgs;
  if (name == "adam") return BaselineAlg::adam;
  if (name == "adagrad") return BaselineAlg::adagrad;
  if (name == "rmsprop") return BaselineAlg::rmsprop;
  throw InvalidArgument("unknown baseline algorithm '" + name + "'");
}

std::string baseline_alg_name(BaselineAlg alg) {
  switch (alg) {
    case BaselineAlg::sgd: return "sgd";
    case BaselineAlg::momentum: return "momentum";
    case BaselineAlg::cg: return "cg";
    case BaselineAlg::lbfgs: return "lbfgs";
    case BaselineAlg::adam: return "adam";
    case BaselineAlg::adagrad: return "adagrad";
    case BaselineAlg::rmsprop: return "rmsprop";
  }
  throw InvalidArgument("unknown baseline algorithm enum value");
}

Eigen::VectorXd baseline_step(const BaselineConfig& config, BaselineState& state,
                              const Eigen::VectorXd& gradient, double value,
                              const Eigen::VectorXd& x, const EvalAtFn& eval_at) {
  if (!(config.step > 0)) throw InvalidArgument("baseline_step: step size must be > 0");
  if (config.lbfgs_memory < 1)
    throw InvalidArgument("baseline_step: lbfgs memory must be >= 1");
  if (!gradient.allFinite())
    throw NumericalError("baseline_step: gradient is not finite");
  const int n = static_cast<int>(gradient.size());
  const double gamma = config.step;
  Eigen::VectorXd dx;

  switch (config.alg) {
    case BaselineAlg::sgd:
      dx = -gamma * gradient;
      break;

    case BaselineAlg::momentum: {
      if (state.velocity.size() != n) state.velocity = Eigen::VectorXd::Zero(n);
      state.velocity = config.momentum_beta * state.velocity + gradient;
      dx = -gamma * state.velocity;
      break;
    }

    case BaselineAlg::adam: {
      if (state.adam_m.size() != n) {
        state.adam_m = Eigen::VectorXd::Zero(n);
        state.adam_v = Eigen::VectorXd::Zero(n);
        state.adam_t = 0;
      }
      state.adam_t += 1;
      state.adam_m = config.adam_beta1 * state.adam_m + (1.0 - config.adam_beta1) * gradient;
      state.adam_v = config.adam_beta2 * state.adam_v.array().matrix() +
                     (1.0 - config.adam_beta2) * gradient.array().square().matrix();
      double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.adam_t));
      double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.adam_t));
      Eigen::ArrayXd m_hat = state.adam_m.array() / bc1;
      Eigen::ArrayXd v_hat = state.adam_v.array() / bc2;
      dx = (-gamma * m_hat / (v_hat.sqrt() + config.adam_eps)).matrix();
      break;
    }

    case BaselineAlg::adagrad: {
      if (state.adagrad_accum.size() != n) state.adagrad_accum = Eigen::VectorXd::Zero(n);
      state.adagrad_accum.array() += gradient.array().square();
      dx = (-gamma * gradient.array() /
            (state.adagrad_accum.array() + config.adagrad_eps).sqrt())
               .matrix();
      break;
    }

    case BaselineAlg::rmsprop: {
      if (state.rms_accum.size() != n) state.rms_accum = Eigen::VectorXd::Zero(n);
      state.rms_accum = config.rmsprop_decay * state.rms_accum.array().matrix() +
                        (1.0 - config.rmsprop_decay) * gradient.array().square().matrix();
      dx = (-gamma * gradient.array() /
            (state.rms_accum.array().sqrt() + config.rmsprop_eps))
               .matrix();
      break;
    }

    case BaselineAlg::cg: {
      // Polak-Ribiere+ direction with a fixed step; restart to steepest
      // descent whenever the direction stops being a descent direction.
      Eigen::VectorXd d;
      if (!state.has_prev) {
        d = -gradient;
      } else {
        double denom = state.prev_grad.squaredNorm();
        double beta = denom > kCurvatureFloor
                          ? gradient.dot(gradient - state.prev_grad) / denom
                          : 0.0;
        if (beta < 0.0) beta = 0.0;
        d = -gradient + beta * state.prev_dir;
        if (d.dot(gradient) >= 0.0) d = -gradient;
      }
      dx = gamma * d;
      state.prev_dir = d;
      state.prev_grad = gradient;
      state.has_prev = true;
      break;
    }

    case BaselineAlg::lbfgs: {
      if (state.has_prev) {
        Eigen::VectorXd s = state.prev_step;
        Eigen::VectorXd y = gradient - state.prev_grad;
        double sy = s.dot(y);
        if (sy > kCurvatureFloor * s.norm() * y.norm()) {
          state.lbfgs_s.push_back(std::move(s));
          state.lbfgs_y.push_back(std::move(y));
          while (static_cast<int>(state.lbfgs_s.size()) > config.lbfgs_memory) {
            state.lbfgs_s.pop_front();
            state.lbfgs_y.pop_front();
          }
        }
      }
      Eigen::VectorXd d = lbfgs_direction(state, gradient);
      if (d.dot(gradient) >= 0.0) d = -gradient;
      dx = armijo_step(x, value, gradient, d, gamma, eval_at);
      state.prev_step = dx;
      state.prev_grad = gradient;
      state.has_prev = true;
      break;
    }
  }

  if (!dx.allFinite()) throw NumericalError("baseline_step: step is not finite");
  return dx;
}

BaselineConfig tune_baseline(const Problem& problem, BaselineAlg alg,
                             const std::vector<double>& grid,
                             const TuneOptions& opts) {
  if (grid.empty()) throw InvalidArgument("tune_baseline: empty step grid");
  const double inf = std::numeric_limits<double>::infinity();
  double best_total = inf;
  double best_step = 0.0;
  bool found = false;

  for (double step : grid) {
    if (!(step > 0)) throw InvalidArgument("tune_baseline: grid steps must be > 0");
    BaselineConfig cand = opts.base;
    cand.alg = alg;
    cand.step = step;
    double total = 0.0;
    for (std::uint64_t seed : opts.seeds) {
      BaselineOptimizer opt(cand);
      Eigen::VectorXd xv = problem.init_iterate(seed);
      opt.reset(problem, xv, seed);
      double loss = 0.0;
      try {
        for (int t = 0; t < opts.horizon; ++t) {
          EvalResult ev = problem.noisy_eval(xv, t);
          EvalAtFn eval_at = [&](const Eigen::VectorXd& cand_x) {
            return problem.noisy_eval(cand_x, t).value;
          };
          Eigen::VectorXd dx = opt.step(xv, ev.value, ev.gradient, eval_at);
          xv += dx;
          if (!xv.allFinite()) throw NumericalError("diverged");
          loss += problem.true_eval(xv);
        }
      } catch (const NumericalError&) {
        loss = inf;
      }
      total += loss;
      if (total == inf) break;
    }
    bool better = total < best_total || (total == best_total && found && step < best_step);
    if (!found && std::isfinite(total)) better = true;
    if (std::isfinite(total) && better) {
      best_total = total;
      best_step = step;
      found = true;
    }
  }

  if (!found) {
    std::ostringstream os;
    os << "tune_baseline: every grid point diverged for " << baseline_alg_name(alg)
       << "; grid =";
    for (double s : grid) os << " " << format_double(s);
    throw NumericalError(os.str());
  }
  BaselineConfig out = opts.base;
  out.alg = alg;
  out.step = best_step;
  return out;
}

}  // namespace metaopt
