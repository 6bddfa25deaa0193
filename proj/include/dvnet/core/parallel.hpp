#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace dvnet {

/// Process-wide execution settings. In deterministic mode every reduction is
/// performed in an order that does not depend on the thread count.
struct ExecutionPolicy {
  int threads = 1;
  bool deterministic = true;
};

inline ExecutionPolicy& execution() {
  static ExecutionPolicy policy;
  return policy;
}

/// True while the calling thread must not fan out (it is itself a worker).
inline bool& serial_on_this_thread() {
  thread_local bool serial = false;
  return serial;
}

/// Marks the current thread serial for its lifetime.
struct SerialScope {
  bool previous;
  SerialScope() : previous(serial_on_this_thread()) { serial_on_this_thread() = true; }
  ~SerialScope() { serial_on_this_thread() = previous; }
  SerialScope(const SerialScope&) = delete;
  SerialScope& operator=(const SerialScope&) = delete;
};

/// Runs fn(begin, end) over contiguous slices of [0, n). The slicing depends
/// on the thread count, so callers must only write disjoint outputs.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_grain = 1) {
  const auto threads =
      serial_on_this_thread() ? std::size_t{1} : static_cast<std::size_t>(std::max(1, execution().threads));
  const std::size_t workers = std::min(threads, std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_grain)));
  if (workers <= 1 || n <= 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Runs fn(task) for task in [0, n) on a pool of workers pulling tasks in order.
template <class Fn>
void parallel_tasks(std::size_t n, Fn&& fn) {
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

/// Bounded multi-producer multi-consumer queue.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
  }

  /// Returns nullopt once the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
};

}  // namespace dvnet
