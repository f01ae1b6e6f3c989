#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace ddm {

namespace detail {
inline int& thread_count_ref() {
  static int n = 1;
  return n;
}
}  // namespace detail

// Worker count for the heavy kernels. Results are deterministic for a fixed
// count; the single-threaded default matches the reference execution.
inline void set_num_threads(int n) { detail::thread_count_ref() = n < 1 ? 1 : n; }
inline int num_threads() { return detail::thread_count_ref(); }

// Runs fn(chunk) for chunk = 0..chunks-1 across up to num_threads() threads.
// Chunk boundaries are the caller's; the partition never depends on timing.
inline void parallel_chunks(int chunks, const std::function<void(int)>& fn) {
  const int workers = std::min(chunks, num_threads());
  if (workers <= 1) {
    for (int c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int c = w; c < chunks; c += workers) fn(c);
    });
  for (int c = 0; c < chunks; c += workers) fn(c);
  for (auto& th : pool) th.join();
}

// Splits [0, n) into `parts` contiguous ranges of near-equal size.
inline std::pair<int, int> chunk_range(int n, int parts, int index) {
  const int base = n / parts, rem = n % parts;
  const int lo = index * base + std::min(index, rem);
  return {lo, lo + base + (index < rem ? 1 : 0)};
}

}  // namespace ddm
