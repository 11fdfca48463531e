#pragma once

#include <string>

#include "metaopt/controller.hpp"
#include "metaopt/gps.hpp"

namespace metaopt {

// MOPTPS1 container for a time-varying linear-Gaussian controller.
void save_controller(const LinearGaussianController& psi, const std::string& path);
LinearGaussianController load_controller(const std::string& path);

// A checkpoint directory holds policy.bin, best_policy.bin (MOPTPI1),
// controller.bin (MOPTPS1), duals.bin, and manifest.txt (key=value config
// echo, training problem name, iteration counter, meta-loss history). Round
// trips are bit exact.
void save_checkpoint(const std::string& dir, const BadmmState& state,
                     const MetaTrainConfig& config, const std::string& problem_name);

bool checkpoint_exists(const std::string& dir);

// Training problem recorded in the manifest, or "" when there is none (e.g.
// a bare policy file instead of a checkpoint directory).
std::string checkpoint_problem_name(const std::string& dir);

// Restores the alternation state. Throws ConfigError when the stored config
// echo disagrees with `config` on anything but the iteration budget, or when
// `expected_problem` is non-empty and differs from the recorded problem.
BadmmState load_checkpoint(const std::string& dir, const MetaTrainConfig& config,
                           const std::string& expected_problem = "");

}  // namespace metaopt
