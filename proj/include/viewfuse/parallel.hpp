#pragma once

#include <cstddef>
#include <functional>

namespace viewfuse {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// processed exactly once; results must be written to per-index slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

// Default worker count: hardware concurrency, at least 1.
int default_workers();

}  // namespace viewfuse
