#include "somforge/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace somforge::parallel {
namespace {

std::size_t env_threads() {
  const char* v = std::getenv("SOMFORGE_THREADS");
  if (v == nullptr) return 1;
  try {
    long n = std::stol(v);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
  } catch (...) {
    return 1;
  }
}

std::atomic<std::size_t> g_threads{env_threads()};
std::atomic<bool> g_deterministic{false};

// Fixed pool; a job is a chunk counter shared by all workers plus the caller.
class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
  }
  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size(); }

  void run(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
    std::unique_lock lock(mu_);
    fn_ = &fn;
    n_chunks_ = n_chunks;
    next_.store(0);
    active_ = threads_.size();
    error_ = nullptr;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    work();
    lock.lock();
    done_cv_.wait(lock, [&] { return active_ == 0; });
    fn_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void work() {
    for (;;) {
      std::size_t i = next_.fetch_add(1);
      if (i >= n_chunks_) return;
      try {
        (*fn_)(i);
      } catch (...) {
        std::lock_guard lock(err_mu_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  void loop() {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      work();
      {
        std::lock_guard lock(mu_);
        --active_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::mutex err_mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* fn_ = nullptr;
  std::size_t n_chunks_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t active_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;

}  // namespace

std::size_t thread_count() { return g_threads.load(); }
void set_thread_count(std::size_t n) { g_threads.store(n == 0 ? 1 : n); }

bool deterministic() { return g_deterministic.load(); }
void set_deterministic(bool on) { g_deterministic.store(on); }

void for_each_chunk(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = deterministic() ? 1 : thread_count();
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
  std::lock_guard lock(g_pool_mu);
  if (!g_pool || g_pool->size() != threads - 1) {
    g_pool.reset();
    g_pool = std::make_unique<Pool>(threads - 1);
  }
  g_pool->run(n_chunks, fn);
}

}  // namespace somforge::parallel
