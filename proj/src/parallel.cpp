// Copyright (c) 2026 The xphrase Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xphrase/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace xphrase {
namespace {

thread_local bool t_in_worker = false;

class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { loop(); });
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

  std::size_t workers() const { return threads_.size(); }

  void run(std::size_t chunks, const std::function<void(std::size_t)>& task) {
    std::unique_lock lock(mu_);
    task_ = &task;
    total_ = chunks;
    next_ = 0;
    done_ = 0;
    error_ = nullptr;
    ++generation_;
    cv_.notify_all();
    lock.unlock();
    drain();
    lock.lock();
    done_cv_.wait(lock, [this] { return done_ == total_; });
    task_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    for (;;) {
      std::size_t idx;
      const std::function<void(std::size_t)>* task;
      {
        std::lock_guard lock(mu_);
        if (task_ == nullptr || next_ >= total_) return;
        idx = next_++;
        task = task_;
      }
      try {
        (*task)(idx);
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
      }
      std::lock_guard lock(mu_);
      if (++done_ == total_) done_cv_.notify_all();
    }
  }

  void loop() {
    t_in_worker = true;
    std::size_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t total_ = 0;
  std::size_t next_ = 0;
  std::size_t done_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

std::mutex g_config_mu;
std::size_t g_threads = 0;
std::unique_ptr<Pool> g_pool;
std::mutex g_run_mu;

std::size_t resolve_threads(std::size_t n) {
  if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return n;
}

}  // namespace

void set_num_threads(std::size_t n) {
  std::lock_guard lock(g_config_mu);
  n = resolve_threads(n);
  if (n == g_threads) return;
  g_pool.reset();
  g_threads = n;
  if (n > 1) g_pool = std::make_unique<Pool>(n - 1);
}

std::size_t num_threads() {
  std::lock_guard lock(g_config_mu);
  if (g_threads == 0) {
    g_threads = resolve_threads(0);
    if (g_threads > 1) g_pool = std::make_unique<Pool>(g_threads - 1);
  }
  return g_threads;
}

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  min_chunk = std::max<std::size_t>(1, min_chunk);
  const std::size_t threads = num_threads();
  if (threads <= 1 || t_in_worker || n <= min_chunk) {
    body(0, n);
    return;
  }
  const std::size_t chunks = std::min(threads * 4, (n + min_chunk - 1) / min_chunk);
  const std::size_t per = (n + chunks - 1) / chunks;
  const std::function<void(std::size_t)> task = [&](std::size_t c) {
    const std::size_t begin = c * per;
    const std::size_t end = std::min(n, begin + per);
    if (begin < end) body(begin, end);
  };
  // One parallel region at a time; concurrent callers from independent
  // threads serialize here.
  std::lock_guard run_lock(g_run_mu);
  std::lock_guard lock(g_config_mu);
  if (!g_pool) {
    body(0, n);
    return;
  }
  t_in_worker = true;
  try {
    g_pool->run(chunks, task);
  } catch (...) {
    t_in_worker = false;
    throw;
  }
  t_in_worker = false;
}

}  // namespace xphrase
