#ifndef GEODESIGN_PARALLEL_HPP
#define GEODESIGN_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace geodesign {

// Worker count: GEODESIGN_THREADS if set, otherwise hardware concurrency.
inline unsigned thread_count() {
  if (const char* env = std::getenv("GEODESIGN_THREADS")) {
    try {
      int v = std::stoi(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {
// Set inside pool workers so nested parallel_for calls run inline instead of
// oversubscribing the machine.
inline thread_local bool in_parallel_region = false;
}  // namespace detail

// Runs body(i) for i in [0, count). Work is handed out dynamically, but each
// index writes only its own slot, so results never depend on scheduling.
// The first exception (lowest index) is rethrown after all workers join.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  unsigned workers = std::min<std::size_t>(thread_count(), count);
  if (workers <= 1 || detail::in_parallel_region) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  auto run = [&] {
    const bool outer = detail::in_parallel_region;
    detail::in_parallel_region = true;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    detail::in_parallel_region = outer;
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace geodesign

#endif  // GEODESIGN_PARALLEL_HPP
