#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace almd {

/// Worker threads to use: hardware concurrency, capped by ALMD_THREADS.
inline int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("ALMD_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, cap);
    } catch (const std::exception&) {
    }
  }
  return n;
}

/// Runs fn(i) for i in [0, n). Work items must write to disjoint outputs;
/// the first exception thrown is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int max_workers = 0) {
  const int workers = static_cast<int>(
      std::min<std::size_t>(n, static_cast<std::size_t>(max_workers > 0 ? max_workers : worker_count())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace almd
