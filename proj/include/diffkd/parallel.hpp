#pragma once

#include <cstddef>
#include <functional>

namespace diffkd {

/// Worker count from DKD_THREADS, else hardware concurrency (at least 1).
unsigned default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// visited exactly once; callers write results by index so output order
/// never depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace diffkd
