#pragma once

// Local work-queue executor. Every parallel stage of the pipeline goes through
// Executor::map: tasks are pure functions of their index, results are stored
// by index, and map() returns only after every task has finished (a barrier).
// Outputs therefore never depend on the worker count.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "gsfm/error.hpp"

namespace gsfm {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic per-task seed derived from a global seed and a task key.
inline std::uint64_t task_seed(std::uint64_t global_seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(global_seed) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

struct StageRecord {
  std::string name;
  double wall_seconds = 0.0;
  std::size_t task_count = 0;
  int worker_count = 1;
  // Offsets in seconds from the executor's epoch.
  double first_task_start = 0.0;
  double last_task_end = 0.0;
};

class Executor {
 public:
  using Clock = std::chrono::steady_clock;

  explicit Executor(int n_workers = 1) : n_workers_(std::max(1, n_workers)), epoch_(Clock::now()) {}

  int n_workers() const { return n_workers_; }

  /// Runs fn(0..n-1) on up to n_workers threads and returns the results in
  /// index order. The first exception (by task index) is rethrown after all
  /// tasks complete.
  template <typename Fn>
  auto map(const std::string& stage, std::size_t n, Fn&& fn) {
    using R = std::invoke_result_t<Fn&, std::size_t>;
    static_assert(!std::is_void_v<R>, "use for_each for void tasks");
    std::vector<std::optional<R>> slots(n);
    run(stage, n, [&](std::size_t i) { slots[i].emplace(fn(i)); });
    std::vector<R> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
  }

  template <typename Fn>
  void for_each(const std::string& stage, std::size_t n, Fn&& fn) {
    run(stage, n, [&](std::size_t i) { fn(i); });
  }

  const std::vector<StageRecord>& records() const { return records_; }

  double seconds_since_epoch() const {
    return std::chrono::duration<double>(Clock::now() - epoch_).count();
  }

 private:
  template <typename Task>
  void run(const std::string& stage, std::size_t n, Task&& task) {
    StageRecord rec;
    rec.name = stage;
    rec.task_count = n;
    const auto t0 = Clock::now();
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::mutex time_mutex;
    double first_start = 1e300;
    double last_end = 0.0;

    auto worker = [&]() {
      double local_first = 1e300;
      double local_last = 0.0;
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        local_first = std::min(local_first, seconds_since_epoch());
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
        local_last = std::max(local_last, seconds_since_epoch());
      }
      std::lock_guard<std::mutex> lock(time_mutex);
      first_start = std::min(first_start, local_first);
      last_end = std::max(last_end, local_last);
    };

    const int workers = static_cast<int>(std::min<std::size_t>(n_workers_, std::max<std::size_t>(n, 1)));
    rec.worker_count = workers;
    if (workers <= 1) {
      worker();
    } else {
      std::vector<std::jthread> threads;
      threads.reserve(workers);
      for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    }  // jthreads join here: the stage barrier.

    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    rec.first_task_start = n == 0 ? seconds_since_epoch() : first_start;
    rec.last_task_end = n == 0 ? rec.first_task_start : last_end;
    records_.push_back(rec);
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  int n_workers_;
  Clock::time_point epoch_;
  std::vector<StageRecord> records_;
};

}  // namespace gsfm
