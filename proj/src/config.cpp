#include "metaopt/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_string(buffer.str(), path);
}

Config Config::from_string(const std::string& text, const std::string& name) {
  Config cfg;
  cfg.path_ = name;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(name + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) {
        throw ConfigError(name + ":" + std::to_string(line_no) + ": empty section name");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string bare = trim(t.substr(0, eq));
    if (bare.empty()) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": empty key");
    }
    const std::string key = section.empty() ? bare : section + "." + bare;
    auto [it, inserted] = cfg.entries_.emplace(key, Entry{trim(t.substr(eq + 1)), line_no, false});
    if (!inserted) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first on line " + std::to_string(it->second.line) + ")");
    }
  }
  return cfg;
}

const Config::Entry* Config::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

Config::Entry* Config::take(const std::string& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

std::string Config::get_string(const std::string& key) {
  Entry* e = take(key);
  if (!e) throw ConfigError(path_ + ": missing required key '" + key + "'");
  return e->value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) {
  Entry* e = take(key);
  return e ? e->value : fallback;
}

double Config::get_double(const std::string& key) {
  Entry* e = take(key);
  if (!e) throw ConfigError(path_ + ": missing required key '" + key + "'");
  try {
    return parse_double(e->value, key);
  } catch (const Error& err) {
    throw ConfigError(path_ + ":" + std::to_string(e->line) + ": " + err.what());
  }
}

double Config::get_double(const std::string& key, double fallback) {
  return has(key) ? get_double(key) : fallback;
}

long long Config::get_int(const std::string& key) {
  Entry* e = take(key);
  if (!e) throw ConfigError(path_ + ": missing required key '" + key + "'");
  try {
    return parse_int(e->value, key);
  } catch (const Error& err) {
    throw ConfigError(path_ + ":" + std::to_string(e->line) + ": " + err.what());
  }
}

long long Config::get_int(const std::string& key, long long fallback) {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) {
  Entry* e = take(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  throw ConfigError(path_ + ":" + std::to_string(e->line) + ": '" + key +
                    "' must be true/false/1/0, got '" + e->value + "'");
}

void Config::require_all_consumed() const {
  for (const auto& [key, entry] : entries_) {
    if (!entry.used) {
      throw ConfigError(path_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    }
  }
}

std::string Config::dir() const {
  const auto parent = std::filesystem::path(path_).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

std::unique_ptr<TrainingProblem> problem_from_config(Config& cfg) {
  Dataset dataset;
  const std::uint64_t dataset_seed =
      static_cast<std::uint64_t>(cfg.get_int("problem.dataset_seed", 7));

  if (cfg.has("problem.dataset")) {
    std::filesystem::path p(cfg.get_string("problem.dataset"));
    if (p.is_relative()) p = std::filesystem::path(cfg.dir()) / p;
    dataset = load_dataset(p.string());
  } else {
    const std::string kind = cfg.get_string("problem.synthetic", "gaussian-mixture");
    const int examples = static_cast<int>(cfg.get_int("problem.examples", 1024));
    if (kind == "gaussian-mixture") {
      dataset = make_gaussian_mixture(static_cast<int>(cfg.get_int("problem.classes", 4)),
                                      static_cast<int>(cfg.get_int("problem.input_dim", 8)),
                                      examples, cfg.get_double("problem.spread", 2.0),
                                      dataset_seed);
    } else if (kind == "two-spirals") {
      dataset = make_two_spirals(examples, cfg.get_double("problem.noise", 0.0), dataset_seed);
    } else {
      throw ConfigError(cfg.path() + ": problem.synthetic must be 'gaussian-mixture' or "
                        "'two-spirals', got '" + kind + "'");
    }
  }

  MlpArchitecture arch;
  arch.input_dim = dataset.input_dim();
  arch.hidden_dim = static_cast<int>(cfg.get_int("problem.hidden", 8));
  arch.output_dim = dataset.num_classes;
  try {
    arch.activation = parse_activation(cfg.get_string("problem.activation", "relu"));
  } catch (const Error& err) {
    throw ConfigError(cfg.path() + ": " + err.what());
  }

  const int minibatch = static_cast<int>(cfg.get_int("problem.minibatch", 16));
  const int holdout = static_cast<int>(cfg.get_int("problem.holdout", 1024));
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("problem.seed", 5));
  const std::string name = cfg.get_string("problem.name", "");
  try {
    return std::make_unique<TrainingProblem>(std::move(dataset), arch, minibatch, holdout,
                                             seed, name);
  } catch (const InvalidArgument& err) {
    throw ConfigError(cfg.path() + ": " + err.what());
  }
}

MetaTrainConfig train_config_from_config(Config& cfg) {
  MetaTrainConfig train;
  train.horizon = static_cast<int>(cfg.get_int("train.horizon", train.horizon));
  train.num_rollouts = static_cast<int>(cfg.get_int("train.rollouts", train.num_rollouts));
  train.gps_iterations =
      static_cast<int>(cfg.get_int("train.iterations", train.gps_iterations));
  train.epsilon = cfg.get_double("train.epsilon", train.epsilon);
  train.alpha = cfg.get_double("train.alpha", train.alpha);
  train.nu_init = cfg.get_double("train.nu_init", train.nu_init);
  train.nu_mult_up = cfg.get_double("train.nu_mult_up", train.nu_mult_up);
  train.nu_mult_down = cfg.get_double("train.nu_mult_down", train.nu_mult_down);
  train.init_step = cfg.get_double("train.init_step", train.init_step);
  train.ridge = cfg.get_double("train.ridge", train.ridge);
  train.policy_hidden = static_cast<int>(cfg.get_int("train.policy_hidden", train.policy_hidden));
  train.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));
  train.supervised.epochs =
      static_cast<int>(cfg.get_int("train.epochs", train.supervised.epochs));
  train.supervised.step = cfg.get_double("train.policy_step", train.supervised.step);
  train.supervised.momentum = cfg.get_double("train.momentum", train.supervised.momentum);
  train.supervised.column_chunk =
      static_cast<int>(cfg.get_int("train.column_chunk", train.supervised.column_chunk));
  train.supervised.update_variance =
      cfg.get_bool("train.update_variance", train.supervised.update_variance);

  if (cfg.has("output.checkpoint_dir")) {
    std::filesystem::path p(cfg.get_string("output.checkpoint_dir"));
    if (p.is_relative()) p = std::filesystem::path(cfg.dir()) / p;
    train.checkpoint_dir = p.string();
  }
  try {
    train.validate();
  } catch (const Error& err) {
    throw ConfigError(cfg.path() + ": " + err.what());
  }
  return train;
}

TrainingSetup load_training_setup(const std::string& config_path) {
  Config cfg = Config::load(config_path);
  TrainingSetup setup;
  setup.train = train_config_from_config(cfg);
  setup.problem = problem_from_config(cfg);
  cfg.require_all_consumed();
  return setup;
}

std::unique_ptr<TrainingProblem> load_problem_file(const std::string& path) {
  Config cfg = Config::load(path);
  auto problem = problem_from_config(cfg);
  cfg.require_all_consumed();
  return problem;
}

}  // namespace metaopt
