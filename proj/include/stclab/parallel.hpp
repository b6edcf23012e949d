// Node-level parallelism for per-level maps. The loop body writes to
// disjoint slots, so results are bitwise identical for any thread count.
// STC_THREADS caps the number of workers; unset means sequential.
#pragma once

#include <cstdlib>
#include <cstddef>
#include <thread>
#include <vector>

namespace stclab {

inline int max_threads() {
    static const int cap = [] {
        const char* env = std::getenv("STC_THREADS");
        if (!env) return 1;
        int v = std::atoi(env);
        if (v < 1) return 1;
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        return v < hw ? v : hw;
    }();
    return cap;
}

template <typename Body>
void parallel_for(std::size_t n, const Body& body) {
    const int threads = max_threads();
    if (threads <= 1 || n < 256) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        const std::size_t lo = static_cast<std::size_t>(t) * chunk;
        if (lo >= n) break;
        const std::size_t hi = lo + chunk < n ? lo + chunk : n;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace stclab
