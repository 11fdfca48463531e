#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace metaopt {

// Per-coordinate state vector layout. 77 entries:
//   row 0        current iterate value
//   rows 1..25   relative changes of the running-average objective at lags
//                5i vs 5(i+1), i = 0..24 (scalars, broadcast to every
//                coordinate so each per-coordinate subproblem is closed)
//   rows 26..51  running-average gradients normalized by an earlier average
//                gradient magnitude, i = 0..25
//   rows 52..76  magnitude ratio of an earlier iterate change to the current
//                iterate change, i = 0..24
inline constexpr int kObjFeatureCount = 25;
inline constexpr int kGradFeatureCount = 26;
inline constexpr int kRatioFeatureCount = 25;
inline constexpr int kStateDim = 1 + kObjFeatureCount + kGradFeatureCount + kRatioFeatureCount;
inline constexpr int kObsDim = 3;

inline constexpr int kObjFeatureRow = 1;
inline constexpr int kGradFeatureRow = 1 + kObjFeatureCount;   // row 26; i=0 entry
inline constexpr int kRatioFeatureRow = kGradFeatureRow + kGradFeatureCount;

// Deepest state-feature lookup is the running average at t-130, which needs
// raw history entries down to t-132.
inline constexpr int kDeepestAverageLag = 130;
inline constexpr int kHistoryCapacity = kDeepestAverageLag + 3;

// Rolling window over the iterate/gradient/objective history of one
// optimization run. Ring-buffered: entries older than kHistoryCapacity
// timesteps are dropped. Single writer; readers treat it as a snapshot.
class History {
 public:
  explicit History(int dim);

  int dim() const { return dim_; }
  // Timestep of the newest entry, -1 while empty.
  std::int64_t current_t() const { return t_; }

  void push(const Eigen::VectorXd& x, const Eigen::VectorXd& grad, double fhat);

  // Raw entries at timestep i (throws if i fell out of the window).
  const Eigen::VectorXd& x_at(std::int64_t i) const;
  const Eigen::VectorXd& grad_at(std::int64_t i) const;
  double fhat_at(std::int64_t i) const;

  std::int64_t oldest_t() const;

 private:
  int slot(std::int64_t i, const char* what) const;

  int dim_;
  std::int64_t t_ = -1;
  std::vector<Eigen::VectorXd> x_, grad_;
  std::vector<double> fhat_;
};

struct Averages {
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
  double fhat = 0.0;
};

// Mean of the last min(i+1, 3) raw entries ending at timestep i. Summation
// runs in increasing timestep order with a single final division; the
// acceptance oracle reproduces this order, so do not "simplify" it.
Averages averages(const History& history, std::int64_t i);

struct StateFeatures {
  // kStateDim x num_coordinates, one column per coordinate.
  Eigen::MatrixXd values;
  // True when a relative objective change had a zero denominator and the
  // feature was forced to 0.
  bool zero_denominator = false;
};

struct ObservationFeatures {
  Eigen::MatrixXd values;  // kObsDim x num_coordinates
  bool zero_denominator = false;
};

// Both feature maps evaluate at the newest timestep of the history. Any term
// whose (unguarded) time index is negative is exactly 0.
StateFeatures state_features(const History& history);
ObservationFeatures observation_features(const History& history);

}  // namespace metaopt
