#include "metaopt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "metaopt/errors.hpp"
#include "metaopt/gps.hpp"
#include "metaopt/num.hpp"

namespace metaopt {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDivergenceCeiling = 1e10;

std::uint64_t fnv_mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

RunRecord run_algorithm(const Problem& problem, StepOptimizer& opt, std::uint64_t seed,
                        int horizon) {
  if (horizon < 0) throw InvalidArgument("run_algorithm: horizon must be >= 0");

  RunRecord rec;
  rec.algorithm = opt.name();
  rec.problem = problem.name();
  rec.seed = seed;
  rec.run_id = rec.algorithm + "-s" + std::to_string(seed);
  rec.minibatch_hash = 14695981039346656037ULL;

  Eigen::VectorXd x = problem.init_iterate(seed);
  opt.reset(problem, x, seed);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };

  for (int t = 0; t <= horizon; ++t) {
    const double true_value = problem.true_eval(x);
    const EvalResult eval = problem.noisy_eval(x, t);
    if (!std::isfinite(true_value) || !std::isfinite(eval.value) ||
        std::fabs(true_value) > kDivergenceCeiling) {
      rec.diverged = true;
      break;
    }
    rec.true_objective.push_back(true_value);
    rec.noisy_objective.push_back(eval.value);
    rec.wall_ms.push_back(elapsed_ms());
    rec.minibatch_hash = fnv_mix(rec.minibatch_hash, problem.minibatch_fingerprint(t));
    if (t == horizon) break;

    EvalAtFn eval_at = [&problem, t](const Eigen::VectorXd& cand) {
      return problem.noisy_eval(cand, t).value;
    };
    Eigen::VectorXd dx;
    try {
      dx = opt.step(x, eval.value, eval.gradient, eval_at);
    } catch (const NumericalError&) {
      rec.diverged = true;
      break;
    }
    x += dx;
    if (!all_finite(x)) {
      rec.diverged = true;
      break;
    }
  }

  if (rec.diverged || static_cast<int>(rec.true_objective.size()) < horizon + 1) {
    rec.diverged = true;
    rec.final_meta_loss = kInf;
  } else {
    double acc = 0.0;
    for (int t = 1; t <= horizon; ++t) acc += rec.true_objective[t];
    rec.final_meta_loss = std::isfinite(acc) ? acc : kInf;
  }
  return rec;
}

void write_run_csv_header(std::ostream& out) {
  out << "run_id,algorithm,problem,seed,iteration,true_objective,noisy_objective,"
         "wall_ms,transfer\n";
}

void append_run_csv(std::ostream& out, const RunRecord& record) {
  for (std::size_t t = 0; t < record.true_objective.size(); ++t) {
    out << record.run_id << "," << record.algorithm << "," << record.problem << ","
        << record.seed << "," << t << "," << format_double(record.true_objective[t]) << ","
        << format_double(record.noisy_objective[t]) << "," << format_double(record.wall_ms[t])
        << "," << (record.transfer ? "true" : "false") << "\n";
  }
}

PolicyParams load_deployed_policy(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const std::string best = path + "/best_policy.bin";
    if (fs::exists(best)) return load_policy(best);
    const std::string current = path + "/policy.bin";
    if (fs::exists(current)) return load_policy(current);
    throw IoError("no policy.bin or best_policy.bin under checkpoint dir: " + path);
  }
  return load_policy(path);
}

CompareReport run_compare(const Problem& problem, const CompareOptions& opts,
                          std::vector<RunRecord>* records) {
  if (opts.algorithms.empty()) throw InvalidArgument("compare: no algorithms given");
  if (opts.seeds.empty()) throw InvalidArgument("compare: no seeds given");
  if (opts.horizon < 0) throw InvalidArgument("compare: horizon must be >= 0");

  struct Prepared {
    std::string name;
    double tuned_step = 0.0;
    BaselineConfig baseline;
    bool is_psd = false;
    PolicyParams policy;
  };

  std::vector<Prepared> algos;
  for (const std::string& name : opts.algorithms) {
    Prepared p;
    p.name = name;
    if (name == "psd") {
      if (opts.checkpoint.empty()) {
        throw ConfigError("compare: algorithm 'psd' needs --checkpoint");
      }
      p.is_psd = true;
      p.policy = load_deployed_policy(opts.checkpoint);
      if (!p.policy.kinds_match(problem.groups())) {
        throw InvalidArgument(
            "compare: checkpoint policy group kinds do not match problem '" +
            problem.name() + "'");
      }
    } else {
      TuneOptions tune;
      tune.horizon = opts.horizon;
      tune.seeds = opts.tune_seeds;
      p.baseline = tune_baseline(problem, parse_baseline_alg(name), opts.tune_grid, tune);
      p.tuned_step = p.baseline.step;
    }
    algos.push_back(std::move(p));
  }

  // One worker per (algorithm, seed); each builds a private optimizer so no
  // state crosses runs.
  const int total = static_cast<int>(algos.size() * opts.seeds.size());
  std::vector<RunRecord> all(total);
  parallel_for(total, [&](int idx) {
    const int a = idx / static_cast<int>(opts.seeds.size());
    const int s = idx % static_cast<int>(opts.seeds.size());
    const Prepared& p = algos[a];
    if (p.is_psd) {
      PsdOptimizer opt(p.policy);
      all[idx] = run_algorithm(problem, opt, opts.seeds[s], opts.horizon);
    } else {
      BaselineOptimizer opt(p.baseline);
      all[idx] = run_algorithm(problem, opt, opts.seeds[s], opts.horizon);
    }
  });

  CompareReport report;
  for (std::size_t a = 0; a < algos.size(); ++a) {
    AlgorithmStats stats;
    stats.algorithm = algos[a].name;
    stats.tuned_step = algos[a].tuned_step;
    stats.mean_curve.assign(opts.horizon + 1, std::numeric_limits<double>::quiet_NaN());

    std::vector<double> losses, finals;
    for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
      const RunRecord& rec = all[a * opts.seeds.size() + s];
      ++stats.runs;
      if (rec.diverged) {
        ++stats.diverged_runs;
      } else {
        losses.push_back(rec.final_meta_loss);
        finals.push_back(rec.true_objective.back());
      }
    }
    if (stats.diverged_runs > 0 || losses.empty()) {
      stats.meta_loss_mean = kInf;
      stats.meta_loss_sd = std::numeric_limits<double>::quiet_NaN();
    }
    if (!losses.empty()) {
      double lm = 0.0, fm = 0.0;
      for (double v : losses) lm += v;
      for (double v : finals) fm += v;
      lm /= static_cast<double>(losses.size());
      fm /= static_cast<double>(finals.size());
      if (stats.diverged_runs == 0) {
        stats.meta_loss_mean = lm;
        stats.meta_loss_sd = sample_sd(losses, lm);
      }
      stats.final_obj_mean = fm;
      stats.final_obj_sd = sample_sd(finals, fm);
      for (int t = 0; t <= opts.horizon; ++t) {
        double acc = 0.0;
        int n = 0;
        for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
          const RunRecord& rec = all[a * opts.seeds.size() + s];
          if (!rec.diverged) {
            acc += rec.true_objective[t];
            ++n;
          }
        }
        if (n > 0) stats.mean_curve[t] = acc / n;
      }
    } else {
      stats.final_obj_mean = std::numeric_limits<double>::quiet_NaN();
      stats.final_obj_sd = std::numeric_limits<double>::quiet_NaN();
    }
    report.entries.push_back(std::move(stats));
  }

  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const AlgorithmStats& x, const AlgorithmStats& y) {
                     if (x.meta_loss_mean != y.meta_loss_mean) {
                       return x.meta_loss_mean < y.meta_loss_mean;
                     }
                     return x.algorithm < y.algorithm;
                   });
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    report.entries[i].rank = static_cast<int>(i) + 1;
  }

  if (records) *records = std::move(all);
  return report;
}

void write_curves_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  write_run_csv_header(out);
  for (const RunRecord& rec : records) append_run_csv(out, rec);
}

void write_means_csv(std::ostream& out, const CompareReport& report) {
  out << "algorithm,iteration,mean_true_objective,runs\n";
  for (const AlgorithmStats& stats : report.entries) {
    for (std::size_t t = 0; t < stats.mean_curve.size(); ++t) {
      out << stats.algorithm << "," << t << "," << format_double(stats.mean_curve[t]) << ","
          << (stats.runs - stats.diverged_runs) << "\n";
    }
  }
}

void write_report(std::ostream& out, const CompareReport& report) {
  out << "rank  algorithm  meta_loss(mean+-sd)  final_obj(mean+-sd)  diverged  tuned_step\n";
  for (const AlgorithmStats& s : report.entries) {
    std::ostringstream line;
    line << s.rank << "  " << s.algorithm << "  ";
    line << format_double(s.meta_loss_mean) << "+-" << format_double(s.meta_loss_sd) << "  ";
    line << format_double(s.final_obj_mean) << "+-" << format_double(s.final_obj_sd) << "  ";
    line << s.diverged_runs << "/" << s.runs << "  ";
    if (s.tuned_step > 0.0) {
      line << format_double(s.tuned_step);
    } else {
      line << "-";
    }
    out << line.str() << "\n";
  }
}

}  // namespace metaopt
