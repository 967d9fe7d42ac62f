#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace couplekit {

/// Worker count: hardware concurrency, capped by COUPLEKIT_THREADS when set.
inline std::size_t worker_count() {
  std::size_t workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COUPLEKIT_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) workers = std::min<std::size_t>(workers, static_cast<std::size_t>(cap));
    } catch (...) {
    }
  }
  return workers;
}

/// Runs fn(i) for i in [0, count) on up to worker_count() threads with static
/// chunking. Callers write into preallocated per-index slots and reduce in a
/// fixed order afterwards, which keeps results independent of thread count.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    threads.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace couplekit
