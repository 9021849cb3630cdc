#pragma once

#include <cstddef>
#include <functional>

namespace mpose {

// Number of worker threads used by parallel_for (hardware concurrency,
// overridable via MPOSE_THREADS for benchmarking).
int worker_count();

// Splits [0,n) into contiguous chunks, one per worker, and runs fn(begin,end)
// on each. Runs serially when n is small, when only one worker is available,
// or when called from inside another parallel_for (no nested pools).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace mpose
