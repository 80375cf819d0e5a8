#pragma once

// Minimal fork-join helper: indices are dealt round-robin to worker threads
// and results are written by index, so output order never depends on timing.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace bruno {

/// Run `fn(k)` for k in [0, n) on up to `workers` threads. After all work
/// finishes, the exception thrown by the lowest failing index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    const std::size_t w = std::max<std::size_t>(1, std::min(workers, n));
    auto body = [&](std::size_t start) {
        for (std::size_t k = start; k < n; k += w) {
            try {
                fn(k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    if (w <= 1) {
        body(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t s = 0; s < w; ++s) pool.emplace_back(body, s);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace bruno
