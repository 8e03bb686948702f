#pragma once

// Process-wide worker pool for data-parallel loops inside tensor kernels.
//
// Work is split by static index ranges and every reduction is combined in
// index order, so results are bit-identical for any worker count. That is
// the contract the determinism tests rely on; do not add dynamic work
// stealing here without preserving it.

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace glcn {

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int threads() const { return n_threads_; }

    void set_threads(int n) {
        if (n < 1) n = 1;
        std::lock_guard<std::mutex> outer(api_mutex_);
        if (n == n_threads_) return;
        stop_workers();
        n_threads_ = n;
        start_workers();
    }

    // Runs fn(begin, end) on disjoint chunks of [0, n). The calling thread
    // executes chunk 0; workers execute the rest.
    void parallel_chunks(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
        if (n <= 0) return;
        int parts = n_threads_;
        if (std::int64_t(parts) > n) parts = int(n);
        if (parts <= 1) {
            fn(0, n);
            return;
        }
        std::lock_guard<std::mutex> outer(api_mutex_);
        {
            std::unique_lock<std::mutex> lk(mutex_);
            job_fn_ = &fn;
            job_n_ = n;
            job_parts_ = parts;
            pending_ = parts - 1;
            ++generation_;
        }
        cv_start_.notify_all();
        run_chunk(0, n, parts, 0, fn);
        std::unique_lock<std::mutex> lk(mutex_);
        cv_done_.wait(lk, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

    ~ThreadPool() { stop_workers(); }

private:
    ThreadPool() {
        unsigned hw = std::thread::hardware_concurrency();
        n_threads_ = hw == 0 ? 1 : int(hw);
        start_workers();
    }

    static void run_chunk(std::int64_t n, std::int64_t total, int parts, int part,
                          const std::function<void(std::int64_t, std::int64_t)>& fn) {
        (void)n;
        std::int64_t begin = total * part / parts;
        std::int64_t end = total * (part + 1) / parts;
        if (begin < end) fn(begin, end);
    }

    void worker_main(int worker_index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
            std::int64_t n = 0;
            int parts = 0;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                fn = job_fn_;
                n = job_n_;
                parts = job_parts_;
            }
            int part = worker_index + 1; // chunk 0 belongs to the caller
            if (fn && part < parts) {
                run_chunk(0, n, parts, part, *fn);
                {
                    std::lock_guard<std::mutex> lk(mutex_);
                    --pending_;
                }
                cv_done_.notify_one();
            }
        }
    }

    void start_workers() {
        stop_ = false;
        for (int i = 0; i + 1 < n_threads_; ++i)
            workers_.emplace_back([this, i] { worker_main(i); });
    }

    void stop_workers() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
        workers_.clear();
    }

    int n_threads_ = 1;
    std::vector<std::thread> workers_;
    std::mutex api_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
    std::int64_t job_n_ = 0;
    int job_parts_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// Convenience: parallel loop over single indices.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    std::function<void(std::int64_t, std::int64_t)> chunk = [&](std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) fn(i);
    };
    ThreadPool::instance().parallel_chunks(n, chunk);
}

template <typename Fn>
void parallel_ranges(std::int64_t n, Fn&& fn) {
    std::function<void(std::int64_t, std::int64_t)> chunk = [&](std::int64_t b, std::int64_t e) { fn(b, e); };
    ThreadPool::instance().parallel_chunks(n, chunk);
}

} // namespace glcn
