#include "parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace lkf::detail {

namespace {

int read_worker_count() {
  if (const char* env = std::getenv("LKF_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

thread_local bool in_parallel_region = false;

class Pool {
 public:
  explicit Pool(int workers) : task_ranges_(static_cast<std::size_t>(workers)) {
    for (int i = 1; i < workers; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int width() const { return static_cast<int>(threads_.size()) + 1; }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    // One parallel region at a time; concurrent callers serialize here.
    std::lock_guard<std::mutex> run_lock(run_mu_);
    const int w = width();
    const std::size_t chunk = (n + w - 1) / w;
    {
      std::lock_guard<std::mutex> lock(mu_);
      fn_ = &fn;
      for (int i = 0; i < w; ++i) {
        const std::size_t b = std::min(n, chunk * static_cast<std::size_t>(i));
        task_ranges_[i] = {b, std::min(n, b + chunk)};
      }
      pending_ = w - 1;
      ++generation_;
    }
    cv_.notify_all();
    in_parallel_region = true;
    fn(task_ranges_[0].first, task_ranges_[0].second);
    in_parallel_region = false;
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void worker_loop(int index) {
    in_parallel_region = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
      std::pair<std::size_t, std::size_t> range;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = fn_;
        range = task_ranges_[static_cast<std::size_t>(index)];
      }
      if (range.first < range.second) (*fn)(range.first, range.second);
      {
        std::lock_guard<std::mutex> lock(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::vector<std::pair<std::size_t, std::size_t>> task_ranges_;
  const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

Pool& pool() {
  static Pool instance(read_worker_count());
  return instance;
}

}  // namespace

int worker_count() {
  static const int n = read_worker_count();
  return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  if (worker_count() == 1 || n == 1 || in_parallel_region) {
    fn(0, n);
    return;
  }
  pool().run(n, fn);
}

}  // namespace lkf::detail
