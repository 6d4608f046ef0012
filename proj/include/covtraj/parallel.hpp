#pragma once

#include <cstddef>
#include <functional>

namespace covtraj {

/// COVTRAJ_WORKERS when set to a positive integer, otherwise the hardware
/// concurrency (at least 1).
int default_worker_count();

/// Calls body(i) for i in [0, n) on up to `workers` threads. Indices are
/// handed out dynamically; results must be written to per-index slots. The
/// exception thrown for the smallest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, int workers = default_worker_count());

}  // namespace covtraj
