#pragma once

#include <map>
#include <memory>
#include <string>

#include "metaopt/gps.hpp"
#include "metaopt/problem.hpp"

namespace metaopt {

// Flat key=value configuration with [section] headers. Keys are addressed as
// "section.key". Full-line # comments and blank lines are skipped; values
// keep everything after the first '=', trimmed. Every key must be consumed
// by a reader, so typos surface as errors naming the key and its line.
class Config {
 public:
  static Config load(const std::string& path);
  static Config from_string(const std::string& text, const std::string& name);

  bool has(const std::string& key) const;

  // Required-key getters throw ConfigError when the key is absent; the
  // fallback overloads make the key optional. Malformed values always throw.
  std::string get_string(const std::string& key);
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key);
  double get_double(const std::string& key, double fallback);
  long long get_int(const std::string& key);
  long long get_int(const std::string& key, long long fallback);
  bool get_bool(const std::string& key, bool fallback);

  // Throws ConfigError naming the first key that no reader asked for.
  void require_all_consumed() const;

  const std::string& path() const { return path_; }
  // Directory of the config file; relative dataset paths resolve against it.
  std::string dir() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
  };

  const Entry* find(const std::string& key) const;
  Entry* take(const std::string& key);

  std::string path_;
  std::map<std::string, Entry> entries_;
};

// Builds the problem described by a config's [problem] section: either a
// dataset file reference or a synthetic generator spec, plus the MLP
// architecture and minibatch sizes.
std::unique_ptr<TrainingProblem> problem_from_config(Config& cfg);

// Reads the [train] and [output] sections into a MetaTrainConfig.
MetaTrainConfig train_config_from_config(Config& cfg);

struct TrainingSetup {
  MetaTrainConfig train;
  std::unique_ptr<TrainingProblem> problem;
};

// Parses a meta-training config file end to end and rejects unknown keys.
TrainingSetup load_training_setup(const std::string& config_path);

// Parses a problem-only config file ([problem] section) and rejects unknown
// keys.
std::unique_ptr<TrainingProblem> load_problem_file(const std::string& path);

}  // namespace metaopt
