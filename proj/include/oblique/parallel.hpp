#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace oblique {

// Runs f(i) for i in [begin, end) on up to num_threads workers. Callers index
// into preallocated output slots, so results are schedule-independent.
template <typename F>
void parallel_for(int begin, int end, int num_threads, F&& f) {
  const int count = end - begin;
  if (count <= 0) return;
  num_threads = std::max(1, std::min(num_threads, count));
  if (num_threads == 1) {
    for (int i = begin; i < end; ++i) f(i);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= end) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(num_threads));
  for (int t = 0; t < num_threads; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace oblique
