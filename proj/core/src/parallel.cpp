#include "vadforge/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>

namespace vadforge {
namespace {

int threads_from_env() {
  if (const char* env = std::getenv("VADFORGE_THREADS")) {
    try {
      int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{threads_from_env()};
  return threads;
}

}  // namespace

int worker_threads() { return thread_setting().load(); }

void set_worker_threads(int threads) { thread_setting().store(threads > 0 ? threads : 1); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const int threads = worker_threads();
  if (threads <= 1 || count <= 1 || omp_in_parallel()) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (long long i = 0; i < n; ++i) body(static_cast<std::size_t>(i));
}

}  // namespace vadforge
