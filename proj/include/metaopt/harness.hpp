#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "metaopt/baselines.hpp"
#include "metaopt/optimizer.hpp"
#include "metaopt/policy.hpp"
#include "metaopt/problem.hpp"

namespace metaopt {

// One benchmark run of one optimizer over one seed. Objective traces cover
// iterations 0..T unless the run diverged, in which case they stop at the
// last finite iterate.
struct RunRecord {
  std::string run_id;
  std::string algorithm;
  std::string problem;
  std::uint64_t seed = 0;
  bool transfer = false;
  bool diverged = false;
  std::vector<double> true_objective;
  std::vector<double> noisy_objective;
  std::vector<double> wall_ms;  // elapsed since run start, per iterate
  double final_meta_loss = 0.0;
  std::uint64_t minibatch_hash = 0;  // combined fingerprint of every minibatch seen
};

// Drives `opt` for `horizon` steps from problem.init_iterate(seed). The
// x0 and minibatch sequences depend only on (problem, seed, step), so every
// algorithm sees identical data for a given seed.
RunRecord run_algorithm(const Problem& problem, StepOptimizer& opt, std::uint64_t seed,
                        int horizon);

// CSV schema: run_id,algorithm,problem,seed,iteration,true_objective,
// noisy_objective,wall_ms,transfer. One row per recorded iterate.
void write_run_csv_header(std::ostream& out);
void append_run_csv(std::ostream& out, const RunRecord& record);

struct CompareOptions {
  std::vector<std::string> algorithms;  // baseline names and/or "psd"
  std::vector<std::uint64_t> seeds;
  int horizon = 100;
  std::string checkpoint;            // checkpoint dir or policy file, for "psd"
  std::vector<double> tune_grid = {1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001};
  std::vector<std::uint64_t> tune_seeds = {17, 29};
};

struct AlgorithmStats {
  std::string algorithm;
  double tuned_step = 0.0;  // 0 when not applicable (psd)
  int runs = 0;
  int diverged_runs = 0;
  double meta_loss_mean = 0.0;  // +inf when any run diverged
  double meta_loss_sd = 0.0;
  double final_obj_mean = 0.0;
  double final_obj_sd = 0.0;
  std::vector<double> mean_curve;  // per-iteration mean true objective, surviving runs
  int rank = 0;
};

struct CompareReport {
  std::vector<AlgorithmStats> entries;  // ranked by mean meta-loss
};

// Loads a deployable policy from a checkpoint directory (best_policy.bin,
// falling back to policy.bin) or directly from a MOPTPI1 file.
PolicyParams load_deployed_policy(const std::string& path);

// Benchmarks every named algorithm over the shared seed set. Baselines are
// step-tuned on the problem first; a fully diverged algorithm stays in the
// report with its diverged count rather than being dropped.
CompareReport run_compare(const Problem& problem, const CompareOptions& opts,
                          std::vector<RunRecord>* records = nullptr);

// Per-run rows for every algorithm, same schema as the run CSV.
void write_curves_csv(std::ostream& out, const std::vector<RunRecord>& records);

// Per-algorithm mean curves: algorithm,iteration,mean_true_objective,runs.
void write_means_csv(std::ostream& out, const CompareReport& report);

// Human-readable ranking table.
void write_report(std::ostream& out, const CompareReport& report);

}  // namespace metaopt
