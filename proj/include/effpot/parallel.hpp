#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace effpot {

// Runs job(0..n_jobs-1) on up to n_workers threads. Jobs must be independent
// and write only to their own slots; the first exception (by job index) is
// rethrown after all workers finish, so results do not depend on scheduling.
inline void parallel_jobs(int n_jobs, int n_workers, const std::function<void(int)>& job) {
  if (n_jobs <= 0) return;
  if (n_workers < 1) n_workers = 1;
  if (n_workers > n_jobs) n_workers = n_jobs;
  if (n_workers == 1) {
    for (int i = 0; i < n_jobs; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_jobs));
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n_jobs) return;
        try {
          job(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline int default_jobs() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace effpot
