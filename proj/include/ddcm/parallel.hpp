#ifndef DDCM_PARALLEL_HPP
#define DDCM_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace ddcm {

/// Process-wide cap on worker threads. Results never depend on this value:
/// parallel loops only split index ranges whose iterations write disjoint
/// output and perform no shared reductions.
inline std::atomic<int>& worker_cap() {
  static std::atomic<int> cap{static_cast<int>(std::thread::hardware_concurrency())};
  return cap;
}

inline void set_workers(int n) { worker_cap().store(n < 1 ? 1 : n); }
inline int workers() { return std::max(1, worker_cap().load()); }

namespace detail {

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  /// Runs fn(i) for i in [0, count) on up to `threads` workers.
  void run(Eigen::Index count, int threads, const std::function<void(Eigen::Index)>& fn) {
    ensure(threads - 1);
    std::atomic<Eigen::Index> next{0};
    std::atomic<int> done{0};
    const int helpers = std::min<int>(threads - 1, static_cast<int>(workers_.size()));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      job_ = [&next, count, &fn, &done]() {
        for (;;) {
          const Eigen::Index i = next.fetch_add(1);
          if (i >= count) break;
          fn(i);
        }
        done.fetch_add(1);
      };
      pending_ = helpers;
      ++generation_;
    }
    cv_.notify_all();
    for (;;) {  // caller participates
      const Eigen::Index i = next.fetch_add(1);
      if (i >= count) break;
      fn(i);
    }
    while (done.load() < helpers) std::this_thread::yield();
    std::lock_guard<std::mutex> lock(mutex_);
    job_ = nullptr;
  }

 private:
  ThreadPool() = default;
  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  void ensure(int helpers) {
    std::lock_guard<std::mutex> lock(mutex_);
    while (static_cast<int>(workers_.size()) < helpers) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        if (pending_ > 0 && job_) {
          --pending_;
          job = job_;
        }
      }
      if (job) job();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::thread> workers_;
  std::function<void()> job_;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace detail

/// parallel_for over [0, count). fn must write only to slots owned by its
/// index; under that contract the result is identical for any worker count.
template <typename Fn>
void parallel_for(Eigen::Index count, Fn&& fn) {
  if (count <= 0) return;
  const int threads = std::min<Eigen::Index>(workers(), count);
  if (threads <= 1) {
    for (Eigen::Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::function<void(Eigen::Index)> wrapped = std::forward<Fn>(fn);
  detail::ThreadPool::instance().run(count, threads, wrapped);
}

}  // namespace ddcm

#endif  // DDCM_PARALLEL_HPP
