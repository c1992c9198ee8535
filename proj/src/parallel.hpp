#pragma once

#include <cstddef>
#include <functional>

// Deterministic worker pool for data-parallel kernels. Callers may only
// split work so that each output element is produced entirely by one task;
// under that rule results are bit-identical for any thread count, including
// LKF_THREADS=1. Reductions must never be split across tasks.

namespace lkf::detail {

// Number of workers: LKF_THREADS if set (clamped to >= 1), else the hardware
// concurrency.
int worker_count();

// Runs fn(begin, end) over a partition of [0, n). Serial when n is small or
// a parallel region is already active.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace lkf::detail
