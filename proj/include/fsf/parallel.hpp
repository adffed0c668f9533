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

namespace fsf {

/// Worker-thread budget for the data-parallel kernels.
///
/// `threads == 0` means "auto": the FSF_THREADS environment variable if it is
/// set to a positive integer, otherwise the hardware concurrency. Kernels
/// partition work into fixed per-row tasks, so results never depend on this
/// value.
struct Parallelism {
  unsigned threads = 0;
};

inline unsigned resolve_threads(Parallelism par) {
  if (par.threads > 0) return par.threads;
  if (const char* env = std::getenv("FSF_THREADS"); env != nullptr) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && value > 0) return static_cast<unsigned>(value);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls `fn(i)` for every i in [0, n). Tasks are claimed dynamically, so
/// `fn` must only write state owned by index i.
template <class Fn>
void parallel_for(std::size_t n, Parallelism par, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(resolve_threads(par), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(n);
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace fsf
