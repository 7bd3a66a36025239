#pragma once

#include <cstddef>
#include <functional>

namespace mvcnet {

/// Worker count: MVCNET_THREADS if set, else hardware concurrency; always >= 1.
/// set_thread_limit(1) forces single-threaded execution everywhere.
std::size_t thread_count();
void set_thread_limit(std::size_t limit);

/// Runs body(i) for i in [0, n). Each index is handled exactly once; callers
/// write results to disjoint slots. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mvcnet
