#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace advgrid {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is striped by
/// index, so which thread runs an index never affects what fn(i) computes.
/// The first exception (by index) is rethrown after all workers join.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::jthread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace advgrid
