#include "metaopt/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

namespace fs = std::filesystem;

constexpr char kControllerMagic[8] = {'M', 'O', 'P', 'T', 'P', 'S', '1', '\0'};
constexpr char kDualsMagic[8] = {'M', 'O', 'P', 'T', 'D', 'L', '1', '\0'};

void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, 4); }

void write_f64(std::ostream& out, double v) { write_bytes(out, &v, 8); }

void read_bytes(std::istream& in, void* p, std::size_t n, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated file: " + path);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  read_bytes(in, &v, 4, path);
  return v;
}

double read_f64(std::istream& in, const std::string& path) {
  double v = 0;
  read_bytes(in, &v, 8, path);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return in;
}

// Files are written to a sibling temp name and renamed so a killed run never
// leaves a half-written checkpoint entry behind.
void commit(const std::string& tmp, const std::string& path) {
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path + ": " + ec.message());
}

std::map<std::string, std::string> config_echo(const MetaTrainConfig& c) {
  std::map<std::string, std::string> kv;
  kv["config.horizon"] = std::to_string(c.horizon);
  kv["config.num_rollouts"] = std::to_string(c.num_rollouts);
  kv["config.epsilon"] = format_double(c.epsilon);
  kv["config.alpha"] = format_double(c.alpha);
  kv["config.nu_init"] = format_double(c.nu_init);
  kv["config.nu_mult_up"] = format_double(c.nu_mult_up);
  kv["config.nu_mult_down"] = format_double(c.nu_mult_down);
  kv["config.init_step"] = format_double(c.init_step);
  kv["config.ridge"] = format_double(c.ridge);
  kv["config.policy_hidden"] = std::to_string(c.policy_hidden);
  kv["config.seed"] = std::to_string(c.seed);
  kv["config.supervised.epochs"] = std::to_string(c.supervised.epochs);
  kv["config.supervised.step"] = format_double(c.supervised.step);
  kv["config.supervised.momentum"] = format_double(c.supervised.momentum);
  kv["config.supervised.min_step"] = format_double(c.supervised.min_step);
  kv["config.supervised.column_chunk"] = std::to_string(c.supervised.column_chunk);
  kv["config.supervised.update_variance"] = c.supervised.update_variance ? "1" : "0";
  return kv;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    kv.emplace(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

const std::string& manifest_get(const std::map<std::string, std::string>& kv,
                                const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError(path + ": missing key " + key);
  return it->second;
}

}  // namespace

void save_controller(const LinearGaussianController& psi, const std::string& path) {
  std::ofstream out = open_out(path);
  write_bytes(out, kControllerMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(psi.num_groups()));
  write_u32(out, static_cast<std::uint32_t>(psi.horizon));
  for (const auto& cg : psi.groups) {
    write_u32(out, static_cast<std::uint32_t>(cg.K.cols()));
    for (int t = 0; t < cg.K.rows(); ++t) {
      for (int i = 0; i < cg.K.cols(); ++i) write_f64(out, cg.K(t, i));
      write_f64(out, cg.k(t));
      write_f64(out, cg.G(t));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

LinearGaussianController load_controller(const std::string& path) {
  std::ifstream in = open_in(path);
  char magic[8];
  read_bytes(in, magic, 8, path);
  if (std::memcmp(magic, kControllerMagic, 8) != 0) {
    throw IoError("bad magic, not a MOPTPS1 controller file: " + path);
  }
  const int num_groups = static_cast<int>(read_u32(in, path));
  const int horizon = static_cast<int>(read_u32(in, path));
  if (num_groups < 1 || horizon < 1) throw IoError("corrupt controller header: " + path);

  LinearGaussianController psi;
  psi.horizon = horizon;
  psi.groups.resize(num_groups);
  for (auto& cg : psi.groups) {
    const int state_dim = static_cast<int>(read_u32(in, path));
    if (state_dim < 1) throw IoError("corrupt controller group header: " + path);
    cg.K.resize(horizon, state_dim);
    cg.k.resize(horizon);
    cg.G.resize(horizon);
    for (int t = 0; t < horizon; ++t) {
      for (int i = 0; i < state_dim; ++i) cg.K(t, i) = read_f64(in, path);
      cg.k(t) = read_f64(in, path);
      cg.G(t) = read_f64(in, path);
    }
  }
  return psi;
}

void save_checkpoint(const std::string& dir, const BadmmState& state,
                     const MetaTrainConfig& config, const std::string& problem_name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint dir " + dir + ": " + ec.message());

  const std::string policy_path = dir + "/policy.bin";
  const std::string best_path = dir + "/best_policy.bin";
  const std::string controller_path = dir + "/controller.bin";
  const std::string duals_path = dir + "/duals.bin";
  const std::string manifest_path = dir + "/manifest.txt";

  save_policy(state.theta, policy_path + ".tmp");
  commit(policy_path + ".tmp", policy_path);
  save_policy(state.best_theta, best_path + ".tmp");
  commit(best_path + ".tmp", best_path);
  save_controller(state.psi, controller_path + ".tmp");
  commit(controller_path + ".tmp", controller_path);

  {
    std::ofstream out = open_out(duals_path + ".tmp");
    write_bytes(out, kDualsMagic, 8);
    const int groups = static_cast<int>(state.lambda.size());
    const int horizon = groups == 0 ? 0 : static_cast<int>(state.lambda[0].size());
    write_u32(out, static_cast<std::uint32_t>(groups));
    write_u32(out, static_cast<std::uint32_t>(horizon));
    for (int g = 0; g < groups; ++g) {
      for (int t = 0; t < horizon; ++t) write_f64(out, state.lambda[g](t));
      for (int t = 0; t < horizon; ++t) write_f64(out, state.nu[g](t));
      write_f64(out, state.prev_pi_psi_kl[g]);
    }
    if (!out) throw IoError("write failed: " + duals_path);
  }
  commit(duals_path + ".tmp", duals_path);

  {
    std::ofstream out(manifest_path + ".tmp", std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + manifest_path);
    out << "format=MOPTCK1\n";
    out << "problem=" << problem_name << "\n";
    out << "iteration=" << state.iteration << "\n";
    out << "epsilon=" << format_double(state.epsilon) << "\n";
    out << "best_meta_loss=" << format_double(state.best_meta_loss) << "\n";
    out << "meta_loss_history=";
    for (std::size_t i = 0; i < state.meta_loss_history.size(); ++i) {
      if (i) out << ",";
      out << format_double(state.meta_loss_history[i]);
    }
    out << "\n";
    for (const auto& [key, value] : config_echo(config)) out << key << "=" << value << "\n";
    if (!out) throw IoError("write failed: " + manifest_path);
  }
  commit(manifest_path + ".tmp", manifest_path);
}

bool checkpoint_exists(const std::string& dir) {
  return fs::exists(fs::path(dir) / "manifest.txt");
}

std::string checkpoint_problem_name(const std::string& dir) {
  if (!checkpoint_exists(dir)) return "";
  const std::string manifest_path = dir + "/manifest.txt";
  const auto kv = read_manifest(manifest_path);
  auto it = kv.find("problem");
  return it == kv.end() ? "" : it->second;
}

BadmmState load_checkpoint(const std::string& dir, const MetaTrainConfig& config,
                           const std::string& expected_problem) {
  const std::string manifest_path = dir + "/manifest.txt";
  const auto kv = read_manifest(manifest_path);
  if (manifest_get(kv, "format", manifest_path) != "MOPTCK1") {
    throw IoError(manifest_path + ": unknown checkpoint format");
  }
  if (!expected_problem.empty()) {
    const std::string& stored = manifest_get(kv, "problem", manifest_path);
    if (stored != expected_problem) {
      throw ConfigError("checkpoint " + dir + " was trained on problem '" + stored +
                        "', not '" + expected_problem + "'");
    }
  }
  for (const auto& [key, want] : config_echo(config)) {
    const std::string& have = manifest_get(kv, key, manifest_path);
    if (have != want) {
      throw ConfigError("checkpoint " + dir + " was written with " + key + "=" + have +
                        " but the current config has " + key + "=" + want);
    }
  }

  BadmmState state;
  state.iteration = static_cast<int>(
      parse_int(manifest_get(kv, "iteration", manifest_path), "checkpoint iteration"));
  state.epsilon = parse_double(manifest_get(kv, "epsilon", manifest_path), "checkpoint epsilon");
  state.best_meta_loss = parse_double(manifest_get(kv, "best_meta_loss", manifest_path),
                                      "checkpoint best_meta_loss");
  {
    std::stringstream ss(manifest_get(kv, "meta_loss_history", manifest_path));
    std::string item;
    while (std::getline(ss, item, ',')) {
      state.meta_loss_history.push_back(parse_double(item, "checkpoint meta_loss_history"));
    }
  }

  state.theta = load_policy(dir + "/policy.bin");
  state.best_theta = load_policy(dir + "/best_policy.bin");
  state.psi = load_controller(dir + "/controller.bin");

  const std::string duals_path = dir + "/duals.bin";
  std::ifstream in = open_in(duals_path);
  char magic[8];
  read_bytes(in, magic, 8, duals_path);
  if (std::memcmp(magic, kDualsMagic, 8) != 0) {
    throw IoError("bad magic, not a checkpoint duals file: " + duals_path);
  }
  const int groups = static_cast<int>(read_u32(in, duals_path));
  const int horizon = static_cast<int>(read_u32(in, duals_path));
  if (groups != state.psi.num_groups() || horizon != state.psi.horizon) {
    throw IoError(duals_path + ": dimensions disagree with the controller file");
  }
  state.lambda.assign(groups, Eigen::VectorXd(horizon));
  state.nu.assign(groups, Eigen::VectorXd(horizon));
  state.prev_pi_psi_kl.assign(groups, 0.0);
  for (int g = 0; g < groups; ++g) {
    for (int t = 0; t < horizon; ++t) state.lambda[g](t) = read_f64(in, duals_path);
    for (int t = 0; t < horizon; ++t) state.nu[g](t) = read_f64(in, duals_path);
    state.prev_pi_psi_kl[g] = read_f64(in, duals_path);
  }
  return state;
}

}  // namespace metaopt
