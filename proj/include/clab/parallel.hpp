#pragma once
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace clab {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs f(i) for i in [0, n) on up to `threads` workers over contiguous
// chunks. Results must be written to per-index state; under that rule the
// outcome is identical for any thread count. The first exception thrown by
// a worker is rethrown on the calling thread.
template <typename F>
void parallel_for(std::int64_t n, int threads, F&& f) {
    threads = std::min<std::int64_t>(resolve_threads(threads), n);
    if (threads <= 1) {
        for (std::int64_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (std::int64_t i = lo; i < hi; ++i) f(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace clab
