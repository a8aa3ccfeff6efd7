#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace seld3d {

// Worker count: SELD3D_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
inline int thread_count() {
    if (const char* env = std::getenv("SELD3D_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
            // fall through to the default
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n) split into contiguous chunks, one per worker.
// Each index is processed by exactly one thread, so per-index work stays
// deterministic regardless of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int workers = thread_count()) {
    if (n == 0) return;
    const auto w = static_cast<std::size_t>(std::max(1, workers));
    if (w == 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t used = std::min(w, n);
    const std::size_t chunk = (n + used - 1) / used;
    std::vector<std::thread> pool;
    pool.reserve(used);
    std::vector<std::exception_ptr> errors(used);
    for (std::size_t t = 0; t < used; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace seld3d
