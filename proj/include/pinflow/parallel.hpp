#pragma once

#include <cstddef>
#include <functional>

namespace pinflow {

/// Worker count: PINFLOW_THREADS if set, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers write
/// results into per-index slots, so output order never depends on scheduling.
/// The first exception thrown by any fn is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pinflow
