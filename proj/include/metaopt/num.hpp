#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>

namespace metaopt {

// Shortest round-trip decimal rendering of a double (via std::to_chars).
// Parsing the result back yields the identical bit pattern.
std::string format_double(double v);

// Strict double parser; throws InvalidArgument on trailing garbage.
double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m);

// Index of the first non-finite entry of a vector, or -1 if all finite.
int first_non_finite(const Eigen::Ref<const Eigen::VectorXd>& v);

// Worker count used by the rollout/benchmark fan-out. Reads METAOPT_THREADS,
// falls back to hardware concurrency, never exceeds `tasks`.
int thread_count(int tasks);

// Runs fn(i) for i in [0, tasks) on up to thread_count(tasks) threads.
// fn must only touch per-index state; exceptions are rethrown in the caller.
void parallel_for(int tasks, const std::function<void(int)>& fn);

}  // namespace metaopt
