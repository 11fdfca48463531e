#include "metaopt/problem.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "metaopt/errors.hpp"
#include "metaopt/num.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {
namespace {

constexpr std::uint64_t kMinibatchTag = 0x6d696e69ULL;  // "mini"
constexpr std::uint64_t kHoldoutTag = 0x686f6c64ULL;    // "hold"
constexpr std::uint64_t kInitTag = 0x696e6974ULL;       // "init"

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

TrainingProblem::TrainingProblem(Dataset dataset, MlpArchitecture arch,
                                 int minibatch_size, int holdout_batch_size,
                                 std::uint64_t rng_seed, std::string name)
    : dataset_(std::move(dataset)),
      arch_(arch),
      groups_(coordinate_groups(arch)),
      minibatch_size_(minibatch_size),
      rng_seed_(rng_seed),
      name_(std::move(name)) {
  if (dataset_.num_examples() == 0)
    throw InvalidArgument("TrainingProblem: empty dataset");
  if (dataset_.input_dim() != arch_.input_dim)
    throw InvalidArgument("TrainingProblem: dataset dim " +
                          std::to_string(dataset_.input_dim()) +
                          " does not match architecture input dim " +
                          std::to_string(arch_.input_dim));
  if (dataset_.num_classes != arch_.output_dim)
    throw InvalidArgument("TrainingProblem: dataset has " +
                          std::to_string(dataset_.num_classes) +
                          " classes but architecture outputs " +
                          std::to_string(arch_.output_dim));
  if (minibatch_size_ < 1)
    throw InvalidArgument("TrainingProblem: minibatch_size must be >= 1");
  if (holdout_batch_size < 1)
    throw InvalidArgument("TrainingProblem: holdout_batch_size must be >= 1");

  int n = dataset_.num_examples();
  if (holdout_batch_size >= n) {
    holdout_.resize(n);
    std::iota(holdout_.begin(), holdout_.end(), 0);
  } else {
    // Partial Fisher-Yates: first holdout_batch_size entries of a seeded
    // shuffle, i.e. a subsample without replacement.
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng(Rng::mix(rng_seed_, kHoldoutTag));
    holdout_.reserve(holdout_batch_size);
    for (int i = 0; i < holdout_batch_size; ++i) {
      int j = i + static_cast<int>(rng.below(static_cast<std::uint32_t>(n - i)));
      std::swap(pool[i], pool[j]);
      holdout_.push_back(pool[i]);
    }
  }

  if (name_.empty()) {
    std::ostringstream os;
    os << "mlp" << arch_.input_dim << "-" << arch_.hidden_dim << "-"
       << arch_.output_dim << "-" << activation_name(arch_.activation)
       << "-n" << n << "-s" << rng_seed_;
    name_ = os.str();
  }
}

Eigen::VectorXd TrainingProblem::init_iterate(std::uint64_t seed) const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(param_count());
  Rng rng(Rng::mix(seed, kInitTag, rng_seed_));
  double s1 = 1.0 / std::sqrt(static_cast<double>(arch_.input_dim));
  double s2 = 1.0 / std::sqrt(static_cast<double>(arch_.hidden_dim));
  const auto& gs = groups_.groups;
  for (int i = gs[0].begin; i < gs[0].end; ++i) x[i] = s1 * rng.normal();
  for (int i = gs[2].begin; i < gs[2].end; ++i) x[i] = s2 * rng.normal();
  // biases stay zero
  return x;
}

void TrainingProblem::minibatch_indices(std::int64_t step, std::vector<int>& out) const {
  out.resize(minibatch_size_);
  Rng rng(Rng::mix(rng_seed_, kMinibatchTag, static_cast<std::uint64_t>(step)));
  std::uint32_t n = static_cast<std::uint32_t>(dataset_.num_examples());
  for (int i = 0; i < minibatch_size_; ++i) out[i] = static_cast<int>(rng.below(n));
}

EvalResult TrainingProblem::noisy_eval(const Eigen::VectorXd& x, std::int64_t step) const {
  if (x.size() != param_count())
    throw InvalidArgument("noisy_eval: iterate has wrong length");
  int bad = first_non_finite(x);
  if (bad >= 0)
    throw NumericalError("noisy_eval: iterate coordinate " + std::to_string(bad) +
                         " is not finite");
  if (step < 0) throw InvalidArgument("noisy_eval: step must be >= 0");

  std::vector<int> idx;
  minibatch_indices(step, idx);
  Eigen::MatrixXd batch(dataset_.input_dim(), minibatch_size_);
  std::vector<std::int32_t> labels(minibatch_size_);
  for (int b = 0; b < minibatch_size_; ++b) {
    batch.col(b) = dataset_.inputs.row(idx[b]).transpose();
    labels[b] = dataset_.labels[idx[b]];
  }
  EvalResult res;
  res.value = mlp_loss(arch_, x, batch, labels, &res.gradient);
  if (!std::isfinite(res.value) || !res.gradient.allFinite())
    throw NumericalError("noisy_eval: objective or gradient overflowed at step " +
                         std::to_string(step));
  return res;
}

double TrainingProblem::true_eval(const Eigen::VectorXd& x) const {
  if (x.size() != param_count())
    throw InvalidArgument("true_eval: iterate has wrong length");
  int bad = first_non_finite(x);
  if (bad >= 0)
    throw NumericalError("true_eval: iterate coordinate " + std::to_string(bad) +
                         " is not finite");
  int m = static_cast<int>(holdout_.size());
  Eigen::MatrixXd batch(dataset_.input_dim(), m);
  std::vector<std::int32_t> labels(m);
  for (int b = 0; b < m; ++b) {
    batch.col(b) = dataset_.inputs.row(holdout_[b]).transpose();
    labels[b] = dataset_.labels[holdout_[b]];
  }
  double v = mlp_loss(arch_, x, batch, labels, nullptr);
  if (!std::isfinite(v)) throw NumericalError("true_eval: objective overflowed");
  return v;
}

std::uint64_t TrainingProblem::minibatch_fingerprint(std::int64_t step) const {
  std::vector<int> idx;
  minibatch_indices(step, idx);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i : idx) h = fnv1a(h, static_cast<std::uint64_t>(i));
  return h;
}

TrainingProblem make_projected_digits_problem(const Dataset& source, int proj_dim,
                                              std::uint64_t seed,
                                              const DigitsProblemOptions& opts) {
  Dataset projected = project_dataset(source, proj_dim, seed, opts.identity_projection);
  MlpArchitecture arch;
  arch.input_dim = proj_dim;
  arch.hidden_dim = opts.hidden_dim;
  arch.output_dim = projected.num_classes;
  arch.activation = opts.activation;
  return TrainingProblem(std::move(projected), arch, opts.minibatch_size,
                         opts.holdout_batch_size, seed, opts.name);
}

Eigen::VectorXd init_iterate(const Problem& problem, std::uint64_t seed) {
  return problem.init_iterate(seed);
}

}  // namespace metaopt
