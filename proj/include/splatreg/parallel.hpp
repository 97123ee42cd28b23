// Copyright 2026 The splatreg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace splatreg {

inline int& num_threads_ref() {
  static int n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

inline void set_num_threads(int n) { num_threads_ref() = std::max(1, n); }
inline int num_threads() { return num_threads_ref(); }

// Runs fn(item, worker) for item in [0, n). Worker w handles items
// w, w + T, w + 2T, ... so the item->worker mapping is fixed by T alone;
// per-worker partial results reduced in worker order stay reproducible
// for a given thread count.
template <typename Fn>
void parallel_for(size_t n, Fn&& fn, int threads = 0) {
  const int T = threads > 0 ? threads : num_threads();
  if (T == 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(T);
  for (int w = 0; w < T; ++w) {
    pool.emplace_back([&, w]() {
      for (size_t i = static_cast<size_t>(w); i < n; i += static_cast<size_t>(T)) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace splatreg
