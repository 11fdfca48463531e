#include "metaopt/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'T', 'P', 'I', '1', '\0'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint64_t kActionNoiseTag = 0x616374ULL;  // "act"

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_params(const PolicyParams& params, const CoordinateGroupSpec& spec) {
  if (params.num_groups() != spec.num_groups())
    throw InvalidArgument("policy: group count mismatch with problem spec");
  for (const auto& gp : params.groups) {
    if (gp.hidden < 1) throw InvalidArgument("policy: hidden size must be >= 1");
    if (!(gp.action_var > 0))
      throw InvalidArgument("policy: action variance must be > 0 in group " + gp.name);
  }
}

// One LSTM cell update for a single coordinate. h and c are that
// coordinate's columns; returns the mean step.
double lstm_column(const GroupPolicy& gp, const Eigen::Ref<const Eigen::VectorXd>& obs_col,
                   Eigen::Ref<Eigen::VectorXd> h, Eigen::Ref<Eigen::VectorXd> c) {
  const int H = gp.hidden;
  Eigen::VectorXd z = gp.bias;
  z.noalias() += gp.w_input * obs_col;
  z.noalias() += gp.w_recur * h;
  for (int u = 0; u < H; ++u) {
    double gi = sigmoid(z[u]);
    double gf = sigmoid(z[H + u]);
    double gc = std::tanh(z[2 * H + u]);
    double go = sigmoid(z[3 * H + u]);
    double cn = gf * c[u] + gi * gc;
    c[u] = cn;
    h[u] = go * std::tanh(cn);
  }
  return gp.out_scale * (gp.w_out.dot(h) + gp.b_out);
}

}  // namespace

bool PolicyParams::kinds_match(const CoordinateGroupSpec& spec) const {
  if (num_groups() != spec.num_groups()) return false;
  for (int g = 0; g < num_groups(); ++g)
    if (groups[g].kind != spec.groups[g].kind) return false;
  return true;
}

PolicyMemory zero_memory(const PolicyParams& params, const CoordinateGroupSpec& spec) {
  check_params(params, spec);
  PolicyMemory mem;
  mem.h.resize(spec.num_groups());
  mem.c.resize(spec.num_groups());
  for (int g = 0; g < spec.num_groups(); ++g) {
    mem.h[g].setZero(params.groups[g].hidden, spec.groups[g].size());
    mem.c[g].setZero(params.groups[g].hidden, spec.groups[g].size());
  }
  return mem;
}

PolicyParams init_policy(const CoordinateGroupSpec& spec, int hidden, std::uint64_t seed) {
  if (hidden < 1) throw InvalidArgument("init_policy: hidden size must be >= 1");
  if (spec.num_groups() == 0) throw InvalidArgument("init_policy: empty group spec");
  PolicyParams params;
  double wscale = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int g = 0; g < spec.num_groups(); ++g) {
    GroupPolicy gp;
    gp.name = spec.groups[g].name;
    gp.kind = spec.groups[g].kind;
    gp.hidden = hidden;
    Rng rng(Rng::mix(seed, 0x706f6cULL, static_cast<std::uint64_t>(g)));
    gp.w_input.resize(4 * hidden, kObsDim);
    for (int r = 0; r < gp.w_input.rows(); ++r)
      for (int cc = 0; cc < gp.w_input.cols(); ++cc) gp.w_input(r, cc) = wscale * rng.normal();
    gp.w_recur.resize(4 * hidden, hidden);
    for (int r = 0; r < gp.w_recur.rows(); ++r)
      for (int cc = 0; cc < gp.w_recur.cols(); ++cc) gp.w_recur(r, cc) = wscale * rng.normal();
    gp.bias.setZero(4 * hidden);
    gp.bias.segment(hidden, hidden).setConstant(1.0);  // open forget gates
    gp.w_out.resize(hidden);
    for (int u = 0; u < hidden; ++u) gp.w_out[u] = wscale * rng.normal();
    gp.b_out = 0.0;
    gp.out_scale = 1e-2;
    gp.action_var = 1e-4;
    params.groups.push_back(std::move(gp));
  }
  return params;
}

Eigen::VectorXd policy_step(const PolicyParams& params, const CoordinateGroupSpec& spec,
                            PolicyMemory& memory, const Eigen::MatrixXd& obs) {
  check_params(params, spec);
  if (obs.rows() != kObsDim || obs.cols() != spec.total())
    throw InvalidArgument("policy_step: observation matrix shape mismatch");
  Eigen::VectorXd mean(spec.total());
  for (int g = 0; g < spec.num_groups(); ++g) {
    const GroupPolicy& gp = params.groups[g];
    const CoordinateGroup& grp = spec.groups[g];
    for (int j = 0; j < grp.size(); ++j) {
      int coord = grp.begin + j;
      double m = lstm_column(gp, obs.col(coord), memory.h[g].col(j), memory.c[g].col(j));
      if (!std::isfinite(m))
        throw NumericalError("policy_step: non-finite action in group " + gp.name +
                             " coordinate " + std::to_string(coord));
      mean[coord] = m;
    }
  }
  return mean;
}

std::vector<Eigen::VectorXd> policy_forward(const PolicyParams& params,
                                            const CoordinateGroupSpec& spec,
                                            const std::vector<Eigen::MatrixXd>& obs_seq) {
  PolicyMemory mem = zero_memory(params, spec);
  std::vector<Eigen::VectorXd> means;
  means.reserve(obs_seq.size());
  for (const auto& obs : obs_seq) means.push_back(policy_step(params, spec, mem, obs));
  return means;
}

Eigen::VectorXd sample_action(const PolicyParams& params, const CoordinateGroupSpec& spec,
                              const Eigen::VectorXd& mean_action, Rng& rng) {
  check_params(params, spec);
  if (mean_action.size() != spec.total())
    throw InvalidArgument("sample_action: mean length mismatch");
  Eigen::VectorXd a = mean_action;
  for (int g = 0; g < spec.num_groups(); ++g) {
    double sigma = std::sqrt(params.groups[g].action_var);
    const CoordinateGroup& grp = spec.groups[g];
    for (int coord = grp.begin; coord < grp.end; ++coord)
      a[coord] += sigma * rng.normal();
  }
  return a;
}

PsdRun run_psd(const Problem& problem, const PolicyParams& params,
               const Eigen::VectorXd& x0, int horizon, PsdMode mode,
               std::uint64_t noise_seed) {
  if (horizon < 1) throw InvalidArgument("run_psd: horizon must be >= 1");
  const CoordinateGroupSpec& spec = problem.groups();
  check_params(params, spec);
  if (x0.size() != problem.param_count())
    throw InvalidArgument("run_psd: x0 length mismatch");

  PsdRun run;
  History history(problem.param_count());
  PolicyMemory mem = zero_memory(params, spec);
  Eigen::VectorXd x = x0;
  for (int t = 0; t <= horizon; ++t) {
    EvalResult ev;
    try {
      ev = problem.noisy_eval(x, t);
      run.true_values.push_back(problem.true_eval(x));
    } catch (const NumericalError& e) {
      run.diverged = true;
      run.divergence_note = "iteration " + std::to_string(t) + ": " + e.what();
      break;
    }
    run.noisy_values.push_back(ev.value);
    run.iterates.push_back(x);
    if (t == horizon) break;

    history.push(x, ev.gradient, ev.value);
    ObservationFeatures obs = observation_features(history);
    Eigen::VectorXd action = policy_step(params, spec, mem, obs.values);
    if (mode == PsdMode::stochastic) {
      Rng rng(Rng::mix(noise_seed, kActionNoiseTag, static_cast<std::uint64_t>(t)));
      action = sample_action(params, spec, action, rng);
    }
    x += action;
    if (!x.allFinite()) {
      run.diverged = true;
      run.divergence_note =
          "iteration " + std::to_string(t + 1) + ": iterate became non-finite";
      break;
    }
  }
  return run;
}

PsdOptimizer::PsdOptimizer(PolicyParams params, PsdMode mode)
    : params_(std::move(params)), mode_(mode) {}

void PsdOptimizer::reset(const Problem& problem, const Eigen::VectorXd&,
                         std::uint64_t run_seed) {
  spec_ = &problem.groups();
  check_params(params_, *spec_);
  history_ = std::make_unique<History>(problem.param_count());
  memory_ = zero_memory(params_, *spec_);
  run_seed_ = run_seed;
  t_ = 0;
}

Eigen::VectorXd PsdOptimizer::step(const Eigen::VectorXd& x, double value,
                                   const Eigen::VectorXd& gradient, const EvalAtFn&) {
  if (!spec_) throw InvalidArgument("PsdOptimizer::step before reset");
  history_->push(x, gradient, value);
  ObservationFeatures obs = observation_features(*history_);
  Eigen::VectorXd action = policy_step(params_, *spec_, memory_, obs.values);
  if (mode_ == PsdMode::stochastic) {
    Rng rng(Rng::mix(run_seed_, kActionNoiseTag, static_cast<std::uint64_t>(t_)));
    action = sample_action(params_, *spec_, action, rng);
  }
  ++t_;
  return action;
}

namespace {

void write_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ostream& out, std::uint32_t v) {
  write_bytes(out, &v, 4);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      write_bytes(out, &v, 8);
    }
}

void read_bytes(std::istream& in, void* p, size_t n, const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n)))
    throw IoError("truncated policy file: " + path);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v;
  read_bytes(in, &v, 4, path);
  return v;
}

std::string read_string(std::istream& in, const std::string& path) {
  std::uint32_t n = read_u32(in, path);
  if (n > 4096) throw IoError("implausible string length in " + path);
  std::string s(n, '\0');
  read_bytes(in, s.data(), n, path);
  return s;
}

Eigen::MatrixXd read_matrix(std::istream& in, const std::string& path) {
  std::uint32_t r = read_u32(in, path);
  std::uint32_t c = read_u32(in, path);
  if (r > 1u << 20 || c > 1u << 20) throw IoError("implausible tensor shape in " + path);
  Eigen::MatrixXd m(r, c);
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < c; ++j) {
      double v;
      read_bytes(in, &v, 8, path);
      m(i, j) = v;
    }
  return m;
}

}  // namespace

void save_policy(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_bytes(out, kMagic, 8);
  out.put(static_cast<char>(kVersion));
  write_u32(out, static_cast<std::uint32_t>(params.num_groups()));
  for (const auto& gp : params.groups) {
    write_string(out, gp.name);
    write_string(out, gp.kind);
    write_u32(out, static_cast<std::uint32_t>(gp.hidden));
    write_matrix(out, gp.w_input);
    write_matrix(out, gp.w_recur);
    write_matrix(out, gp.bias);
    write_matrix(out, gp.w_out);
    double scalars[3] = {gp.b_out, gp.out_scale, gp.action_var};
    write_bytes(out, scalars, sizeof(scalars));
  }
  if (!out) throw IoError("write failed: " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open policy checkpoint: " + path);
  char magic[8];
  read_bytes(in, magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("bad magic, not a MOPTPI1 policy file: " + path);
  int version = in.get();
  if (version != kVersion)
    throw IoError("unsupported policy checkpoint version " + std::to_string(version) +
                  " in " + path);
  std::uint32_t ng = read_u32(in, path);
  if (ng == 0 || ng > 1024) throw IoError("implausible group count in " + path);
  PolicyParams params;
  for (std::uint32_t g = 0; g < ng; ++g) {
    GroupPolicy gp;
    gp.name = read_string(in, path);
    gp.kind = read_string(in, path);
    gp.hidden = static_cast<int>(read_u32(in, path));
    gp.w_input = read_matrix(in, path);
    gp.w_recur = read_matrix(in, path);
    gp.bias = read_matrix(in, path);
    gp.w_out = read_matrix(in, path);
    double scalars[3];
    read_bytes(in, scalars, sizeof(scalars), path);
    gp.b_out = scalars[0];
    gp.out_scale = scalars[1];
    gp.action_var = scalars[2];
    if (gp.w_input.rows() != 4 * gp.hidden || gp.w_input.cols() != kObsDim ||
        gp.w_recur.rows() != 4 * gp.hidden || gp.w_recur.cols() != gp.hidden ||
        gp.bias.size() != 4 * gp.hidden || gp.w_out.size() != gp.hidden)
      throw IoError("inconsistent tensor shapes in " + path);
    params.groups.push_back(std::move(gp));
  }
  return params;
}

}  // namespace metaopt
