#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace qfc {

// Process-wide worker count; 0 selects hardware concurrency.
void set_thread_count(int n);
int thread_count();

// Run fn over [0, n) split into contiguous blocks, one per worker.  Callers
// must write disjoint outputs; results are then independent of the worker
// count and of scheduling.
void parallel_for(long n, const std::function<void(long, long)>& fn);

}  // namespace qfc
