#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace rost {

// Runs fn(i) for i in [0, n) on up to n_threads worker threads.
//
// Work is split into contiguous index ranges. Callers that need
// reproducibility must make fn(i) depend only on i (e.g. draw from a stream
// branched on i) and must combine results in index order afterwards; under
// that contract the output is identical for any thread count.
inline void parallel_for(std::size_t n, unsigned n_threads,
                         const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (n_threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    unsigned workers = n_threads;
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        std::size_t lo = static_cast<std::size_t>(w) * chunk;
        std::size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, w, &fn, &errs] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

} // namespace rost
