#pragma once

#include <cstddef>
#include <functional>

namespace vadforge {

/// Number of worker threads used by kernels. Defaults to the VADFORGE_THREADS
/// environment variable when set, otherwise the hardware concurrency.
int worker_threads();
void set_worker_threads(int threads);

/// Runs body(i) for i in [0, count). Work items must write disjoint outputs;
/// any reduction happens afterwards in index order, so results never depend
/// on the number of threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace vadforge
