#include "metaopt/features.hpp"

#include <cmath>
#include <string>

#include "metaopt/errors.hpp"

namespace metaopt {

History::History(int dim) : dim_(dim) {
  if (dim < 1) throw InvalidArgument("History: dim must be >= 1");
  x_.resize(kHistoryCapacity);
  grad_.resize(kHistoryCapacity);
  fhat_.resize(kHistoryCapacity, 0.0);
}

void History::push(const Eigen::VectorXd& x, const Eigen::VectorXd& grad, double fhat) {
  if (x.size() != dim_ || grad.size() != dim_)
    throw InvalidArgument("History::push: entry dimension mismatch");
  ++t_;
  int s = static_cast<int>(t_ % kHistoryCapacity);
  x_[s] = x;
  grad_[s] = grad;
  fhat_[s] = fhat;
}

std::int64_t History::oldest_t() const {
  if (t_ < 0) return -1;
  std::int64_t lo = t_ - (kHistoryCapacity - 1);
  return lo < 0 ? 0 : lo;
}

int History::slot(std::int64_t i, const char* what) const {
  if (i < 0 || i > t_ || i < oldest_t())
    throw InvalidArgument(std::string(what) + ": timestep " + std::to_string(i) +
                          " outside retained window [" + std::to_string(oldest_t()) +
                          ", " + std::to_string(t_) + "]");
  return static_cast<int>(i % kHistoryCapacity);
}

const Eigen::VectorXd& History::x_at(std::int64_t i) const {
  return x_[slot(i, "History::x_at")];
}
const Eigen::VectorXd& History::grad_at(std::int64_t i) const {
  return grad_[slot(i, "History::grad_at")];
}
double History::fhat_at(std::int64_t i) const {
  return fhat_[slot(i, "History::fhat_at")];
}

Averages averages(const History& history, std::int64_t i) {
  if (i < 0 || i > history.current_t())
    throw InvalidArgument("averages: timestep " + std::to_string(i) +
                          " out of range [0, " + std::to_string(history.current_t()) + "]");
  std::int64_t lo = i - 2 > 0 ? i - 2 : 0;
  int n = static_cast<int>(i - lo + 1);
  Averages out;
  out.x = history.x_at(lo);
  out.grad = history.grad_at(lo);
  out.fhat = history.fhat_at(lo);
  for (std::int64_t j = lo + 1; j <= i; ++j) {
    out.x += history.x_at(j);
    out.grad += history.grad_at(j);
    out.fhat += history.fhat_at(j);
  }
  out.x /= n;
  out.grad /= n;
  out.fhat /= n;
  return out;
}

StateFeatures state_features(const History& history) {
  std::int64_t t = history.current_t();
  if (t < 0) throw InvalidArgument("state_features: history is empty");
  int dim = history.dim();
  StateFeatures out;
  out.values.setZero(kStateDim, dim);

  out.values.row(0) = history.x_at(t).transpose();

  // Relative change of the running-average objective, lags 5i vs 5(i+1).
  for (int i = 0; i < kObjFeatureCount; ++i) {
    std::int64_t prev = t - 5 * (i + 1);
    if (prev < 0) continue;
    double f_new = averages(history, t - 5 * i).fhat;
    double f_old = averages(history, prev).fhat;
    if (f_old == 0.0) {
      out.zero_denominator = true;
      continue;
    }
    out.values.row(kObjFeatureRow + i).setConstant((f_new - f_old) / f_old);
  }

  // Running-average gradient scaled by an earlier average-gradient magnitude.
  for (int i = 0; i < kGradFeatureCount; ++i) {
    std::int64_t at = t - 5 * i;
    if (at < 0) continue;
    std::int64_t den_at = t - 5 * (i + 1);
    std::int64_t guard = t % 5;
    if (den_at < guard) den_at = guard;
    Eigen::VectorXd num = averages(history, at).grad;
    Eigen::VectorXd den = averages(history, den_at).grad;
    out.values.row(kGradFeatureRow + i) =
        (num.array() / (den.array().abs() + 1.0)).transpose();
  }

  // Earlier iterate change relative to the current iterate change.
  for (int i = 0; i < kRatioFeatureCount; ++i) {
    std::int64_t prev = t - 5 * (i + 1);
    if (prev < 0) continue;
    std::int64_t na = t - 5 * (i + 1);
    std::int64_t na_guard = t % 5 + 5;
    if (na < na_guard) na = na_guard;
    std::int64_t nb = t - 5 * (i + 2);
    std::int64_t nb_guard = t % 5;
    if (nb < nb_guard) nb = nb_guard;
    Eigen::VectorXd num_a = averages(history, na).x;
    Eigen::VectorXd num_b = averages(history, nb).x;
    Eigen::VectorXd den_a = averages(history, t - 5 * i).x;
    Eigen::VectorXd den_b = averages(history, prev).x;
    out.values.row(kRatioFeatureRow + i) =
        ((num_a - num_b).array().abs() / ((den_a - den_b).array().abs() + 0.1))
            .transpose();
  }
  return out;
}

ObservationFeatures observation_features(const History& history) {
  std::int64_t t = history.current_t();
  if (t < 0) throw InvalidArgument("observation_features: history is empty");
  int dim = history.dim();
  ObservationFeatures out;
  out.values.setZero(kObsDim, dim);

  if (t >= 1) {
    double f_prev = history.fhat_at(t - 1);
    if (f_prev == 0.0)
      out.zero_denominator = true;
    else
      out.values.row(0).setConstant((history.fhat_at(t) - f_prev) / f_prev);
  }

  {
    std::int64_t den_at = t - 1 > 0 ? t - 1 : 0;
    const Eigen::VectorXd& num = history.grad_at(t);
    const Eigen::VectorXd& den = history.grad_at(den_at);
    out.values.row(1) = (num.array() / (den.array().abs() + 1.0)).transpose();
  }

  if (t >= 1) {
    std::int64_t a = t - 1 > 1 ? t - 1 : 1;
    std::int64_t b = t - 2 > 0 ? t - 2 : 0;
    Eigen::ArrayXd num = (history.x_at(a) - history.x_at(b)).array().abs();
    Eigen::ArrayXd den = (history.x_at(t) - history.x_at(t - 1)).array().abs() + 0.1;
    out.values.row(2) = (num / den).transpose();
  }
  return out;
}

}  // namespace metaopt
