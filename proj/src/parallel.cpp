#include "wfkit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace wfkit {

namespace {

thread_local bool t_inside_job = false;

class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) {
      threads_.emplace_back([this, i] { loop(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size() + 1; }

  void run(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t chunks = size();
    {
      std::lock_guard lock(mu_);
      job_ = &fn;
      n_ = n;
      pending_ = threads_.size();
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    run_chunk(0, chunks);  // the caller takes chunk 0
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void run_chunk(std::size_t chunk, std::size_t chunks) {
    const std::size_t begin = n_ * chunk / chunks;
    const std::size_t end = n_ * (chunk + 1) / chunks;
    t_inside_job = true;
    try {
      for (std::size_t i = begin; i < end; ++i) (*job_)(i);
    } catch (...) {
      t_inside_job = false;
      std::lock_guard lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
    t_inside_job = false;
  }

  void loop(std::size_t worker) {
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      run_chunk(worker + 1, size());
      {
        std::lock_guard lock(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t n_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
std::size_t g_threads = 1;

}  // namespace

void set_num_threads(std::size_t n) {
  std::lock_guard lock(g_pool_mu);
  n = std::max<std::size_t>(1, n);
  if (n == g_threads) return;
  g_pool.reset();
  g_threads = n;
  if (n > 1) g_pool = std::make_unique<Pool>(n - 1);
}

std::size_t num_threads() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (g_threads <= 1 || n <= 1 || !g_pool || t_inside_job) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::lock_guard lock(g_pool_mu);
  g_pool->run(n, fn);
}

}  // namespace wfkit
