// Command-line front end: meta-training, benchmark runs, baseline tuning,
// comparisons and feature dumps. Exit codes: 0 success, 2 configuration
// problem, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "metaopt/baselines.hpp"
#include "metaopt/checkpoint.hpp"
#include "metaopt/config.hpp"
#include "metaopt/controller.hpp"
#include "metaopt/errors.hpp"
#include "metaopt/gps.hpp"
#include "metaopt/harness.hpp"
#include "metaopt/num.hpp"
#include "metaopt/policy.hpp"

namespace {

using namespace metaopt;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    seeds.push_back(static_cast<std::uint64_t>(parse_int(item, "seed list")));
  }
  if (seeds.empty()) throw ConfigError("empty seed list: '" + text + "'");
  return seeds;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    values.push_back(parse_double(item, "value list"));
  }
  if (values.empty()) throw ConfigError("empty value list: '" + text + "'");
  return values;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

int cmd_meta_train(const std::string& config_path) {
  TrainingSetup setup = load_training_setup(config_path);
  if (setup.train.checkpoint_dir.empty()) {
    throw ConfigError(config_path + ": meta-train needs output.checkpoint_dir");
  }
  std::cerr << "meta-train: problem " << setup.problem->name() << ", T="
            << setup.train.horizon << ", " << setup.train.gps_iterations
            << " iterations\n";

  std::vector<GpsIterationInfo> trace;
  meta_train(setup.train, *setup.problem, &trace);

  // Reload the manifest so the printed history covers resumed runs too.
  BadmmState state = load_checkpoint(setup.train.checkpoint_dir, setup.train,
                                     setup.problem->name());
  for (std::size_t i = 0; i < state.meta_loss_history.size(); ++i) {
    std::cerr << "  iteration " << i << ": meta_loss "
              << format_double(state.meta_loss_history[i]) << "\n";
  }
  std::cerr << "best meta_loss " << format_double(state.best_meta_loss) << "\n";
  std::cout << setup.train.checkpoint_dir << "\n";
  return 0;
}

int cmd_run(const std::string& checkpoint, const std::string& problem_path, int horizon,
            const std::string& seed_list, const std::string& out_path, bool stochastic) {
  auto problem = load_problem_file(problem_path);
  PolicyParams policy = load_deployed_policy(checkpoint);
  if (!policy.kinds_match(problem->groups())) {
    throw InvalidArgument("checkpoint policy group kinds do not match problem '" +
                          problem->name() + "'; cannot transfer");
  }
  const std::string trained_on = checkpoint_problem_name(checkpoint);
  const bool transfer = !trained_on.empty() && trained_on != problem->name();

  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
  std::vector<RunRecord> records(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), [&](int i) {
    PsdOptimizer opt(policy, stochastic ? PsdMode::stochastic : PsdMode::deterministic);
    records[i] = run_algorithm(*problem, opt, seeds[i], horizon);
    records[i].transfer = transfer;
  });

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file = open_output(out_path);
    out = &file;
  }
  write_run_csv_header(*out);
  for (const RunRecord& rec : records) append_run_csv(*out, rec);
  return 0;
}

int cmd_baseline(const std::string& alg_name, const std::string& grid_text,
                 const std::string& problem_path, int horizon, const std::string& seed_list,
                 const std::string& out_path) {
  auto problem = load_problem_file(problem_path);
  const BaselineAlg alg = parse_baseline_alg(alg_name);

  TuneOptions tune;
  tune.horizon = horizon;
  std::vector<double> grid = {1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001};
  if (!grid_text.empty()) grid = parse_double_list(grid_text);
  const BaselineConfig best = tune_baseline(*problem, alg, grid, tune);
  std::cerr << "algorithm=" << baseline_alg_name(alg) << " tuned_step="
            << format_double(best.step) << "\n";

  if (!seed_list.empty()) {
    const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
    std::vector<RunRecord> records(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), [&](int i) {
      BaselineOptimizer opt(best);
      records[i] = run_algorithm(*problem, opt, seeds[i], horizon);
    });
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
      file = open_output(out_path);
      out = &file;
    }
    write_run_csv_header(*out);
    for (const RunRecord& rec : records) append_run_csv(*out, rec);
  }
  return 0;
}

int cmd_compare(const std::string& problem_path, const std::string& algorithms,
                const std::string& seed_list, int horizon, const std::string& out_dir,
                const std::string& checkpoint, const std::string& grid_text,
                const std::string& tune_seed_list) {
  auto problem = load_problem_file(problem_path);

  CompareOptions opts;
  {
    std::stringstream ss(algorithms);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) opts.algorithms.push_back(item);
    }
  }
  opts.seeds = parse_seed_list(seed_list);
  opts.horizon = horizon;
  opts.checkpoint = checkpoint;
  if (!grid_text.empty()) opts.tune_grid = parse_double_list(grid_text);
  if (!tune_seed_list.empty()) opts.tune_seeds = parse_seed_list(tune_seed_list);

  std::vector<RunRecord> records;
  const CompareReport report = run_compare(*problem, opts, &records);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out = open_output(out_dir + "/curves.csv");
    write_curves_csv(out, records);
  }
  {
    std::ofstream out = open_output(out_dir + "/means.csv");
    write_means_csv(out, report);
  }
  {
    std::ofstream out = open_output(out_dir + "/report.txt");
    write_report(out, report);
  }
  write_report(std::cout, report);
  return 0;
}

int cmd_features_dump(const std::string& problem_path, const std::string& optimizer,
                      double step, const std::string& checkpoint, int horizon,
                      std::uint64_t seed, const std::string& out_path) {
  auto problem = load_problem_file(problem_path);

  std::unique_ptr<StepOptimizer> opt;
  if (optimizer == "psd") {
    if (checkpoint.empty()) throw ConfigError("features-dump: 'psd' needs --checkpoint");
    opt = std::make_unique<PsdOptimizer>(load_deployed_policy(checkpoint));
  } else {
    BaselineConfig config;
    config.alg = parse_baseline_alg(optimizer);
    config.step = step;
    opt = std::make_unique<BaselineOptimizer>(config);
  }

  const Eigen::VectorXd x0 = problem->init_iterate(seed);
  opt->reset(*problem, x0, seed);
  RolloutActor actor;
  actor.optimizer = opt.get();
  const Trajectory traj = rollout(*problem, actor, x0, horizon, seed);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file = open_output(out_path);
    out = &file;
  }
  write_trajectory_csv(*out, traj);
  return 0;
}

int cmd_dataset_gen(const std::string& kind, const std::string& out_path, int classes,
                    int input_dim, int examples, double spread, double noise,
                    std::uint64_t seed) {
  Dataset ds;
  if (kind == "gaussian-mixture") {
    ds = make_gaussian_mixture(classes, input_dim, examples, spread, seed);
  } else if (kind == "two-spirals") {
    ds = make_two_spirals(examples, noise, seed);
  } else {
    throw ConfigError("dataset-gen: unknown kind '" + kind +
                      "' (expected gaussian-mixture or two-spirals)");
  }
  save_dataset(ds, out_path);
  std::cerr << "wrote " << ds.num_examples() << " examples, dim " << ds.input_dim()
            << ", " << ds.num_classes << " classes to " << out_path << "\n";
  return 0;
}

int cmd_digits_import(const std::string& csv_path, const std::string& out_path) {
  Dataset ds = load_digits_csv(csv_path);
  save_dataset(ds, out_path);
  std::cerr << "imported " << ds.num_examples() << " examples to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned-optimizer toolkit: meta-train a step-prediction policy and "
               "benchmark it against hand-engineered optimizers"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("meta-train", "Run the full meta-training loop");
  train->add_option("--config", config_path, "Config file (key=value with [sections])")
      ->required();

  std::string run_checkpoint, run_problem, run_seeds, run_out;
  int run_horizon = 100;
  bool run_stochastic = false;
  auto* run = app.add_subcommand("run", "Roll the trained policy out as an optimizer");
  run->add_option("--checkpoint", run_checkpoint, "Checkpoint dir or policy file")->required();
  run->add_option("--problem", run_problem, "Problem config file")->required();
  run->add_option("--horizon", run_horizon, "Steps per run");
  run->add_option("--seeds", run_seeds, "Comma-separated run seeds")->required();
  run->add_option("--out", run_out, "CSV output path (default stdout)");
  run->add_flag("--stochastic", run_stochastic, "Sample actions instead of taking the mean");

  std::string bl_alg, bl_grid, bl_problem, bl_seeds, bl_out;
  int bl_horizon = 100;
  auto* baseline = app.add_subcommand("baseline", "Grid-tune a baseline optimizer");
  baseline->add_option("--alg", bl_alg, "sgd|momentum|cg|lbfgs|adam|adagrad|rmsprop")
      ->required();
  baseline->add_option("--grid", bl_grid, "Comma-separated step sizes");
  baseline->add_option("--problem", bl_problem, "Problem config file")->required();
  baseline->add_option("--horizon", bl_horizon, "Steps per run");
  baseline->add_option("--seeds", bl_seeds, "Eval seeds; when set, runs are written as CSV");
  baseline->add_option("--out", bl_out, "CSV output path (default stdout)");

  std::string cp_problem, cp_algorithms, cp_seeds, cp_out_dir, cp_checkpoint, cp_grid,
      cp_tune_seeds;
  int cp_horizon = 100;
  auto* compare = app.add_subcommand("compare", "Benchmark algorithms on shared seeds");
  compare->add_option("--problem", cp_problem, "Problem config file")->required();
  compare->add_option("--algorithms", cp_algorithms, "Comma-separated names, e.g. sgd,adam,psd")
      ->required();
  compare->add_option("--seeds", cp_seeds, "Comma-separated run seeds")->required();
  compare->add_option("--horizon", cp_horizon, "Steps per run");
  compare->add_option("--out-dir", cp_out_dir, "Directory for curves.csv/means.csv/report.txt")
      ->required();
  compare->add_option("--checkpoint", cp_checkpoint, "Checkpoint for the psd entry");
  compare->add_option("--grid", cp_grid, "Step grid for baseline tuning");
  compare->add_option("--tune-seeds", cp_tune_seeds, "Seeds reserved for tuning");

  std::string fd_problem, fd_optimizer = "sgd", fd_checkpoint, fd_out;
  double fd_step = 0.1;
  int fd_horizon = 10;
  std::uint64_t fd_seed = 1;
  auto* features = app.add_subcommand("features-dump",
                                      "Dump per-coordinate feature vectors along a run");
  features->add_option("--problem", fd_problem, "Problem config file")->required();
  features->add_option("--optimizer", fd_optimizer, "Baseline name or 'psd'");
  features->add_option("--step", fd_step, "Baseline step size");
  features->add_option("--checkpoint", fd_checkpoint, "Checkpoint when optimizer=psd");
  features->add_option("--horizon", fd_horizon, "Steps to record");
  features->add_option("--seed", fd_seed, "x0 seed");
  features->add_option("--out", fd_out, "CSV output path (default stdout)");

  std::string dg_kind, dg_out;
  int dg_classes = 4, dg_input_dim = 8, dg_examples = 1024;
  double dg_spread = 2.0, dg_noise = 0.0;
  std::uint64_t dg_seed = 7;
  auto* dataset_gen = app.add_subcommand("dataset-gen", "Generate a synthetic dataset file");
  dataset_gen->add_option("--kind", dg_kind, "gaussian-mixture|two-spirals")->required();
  dataset_gen->add_option("--out", dg_out, "Output dataset path")->required();
  dataset_gen->add_option("--classes", dg_classes, "Class count (gaussian-mixture)");
  dataset_gen->add_option("--input-dim", dg_input_dim, "Input dim (gaussian-mixture)");
  dataset_gen->add_option("--examples", dg_examples, "Example count");
  dataset_gen->add_option("--spread", dg_spread, "Component mean spread (gaussian-mixture)");
  dataset_gen->add_option("--noise", dg_noise, "Coordinate noise (two-spirals)");
  dataset_gen->add_option("--seed", dg_seed, "Generator seed");

  std::string di_csv, di_out;
  auto* digits = app.add_subcommand("digits-import", "Convert a digits CSV to a dataset file");
  digits->add_option("--csv", di_csv, "Input CSV with p0..p63,label header")->required();
  digits->add_option("--out", di_out, "Output dataset path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_meta_train(config_path);
    if (run->parsed()) {
      return cmd_run(run_checkpoint, run_problem, run_horizon, run_seeds, run_out,
                     run_stochastic);
    }
    if (baseline->parsed()) {
      return cmd_baseline(bl_alg, bl_grid, bl_problem, bl_horizon, bl_seeds, bl_out);
    }
    if (compare->parsed()) {
      return cmd_compare(cp_problem, cp_algorithms, cp_seeds, cp_horizon, cp_out_dir,
                         cp_checkpoint, cp_grid, cp_tune_seeds);
    }
    if (features->parsed()) {
      return cmd_features_dump(fd_problem, fd_optimizer, fd_step, fd_checkpoint, fd_horizon,
                               fd_seed, fd_out);
    }
    if (dataset_gen->parsed()) {
      return cmd_dataset_gen(dg_kind, dg_out, dg_classes, dg_input_dim, dg_examples,
                             dg_spread, dg_noise, dg_seed);
    }
    if (digits->parsed()) return cmd_digits_import(di_csv, di_out);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
