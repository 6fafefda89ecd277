#pragma once

#include <cstdint>
#include <functional>

namespace saicl {

// Worker-thread cap: SAICL_NUM_THREADS if set, else hardware concurrency.
int num_threads();

// Runs fn(i) for i in [0, n) over a static partition of worker threads.
// Each index is handled by exactly one thread, so writes to per-index slots
// are race-free and results do not depend on the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

} // namespace saicl
