#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace fwn {

// Intra-op worker cap: FLOWWARP_THREADS env var, clamped to hardware threads.
// Defaults to 1 (serial) when unset.
inline int max_threads() {
    static const int cached = [] {
        const char* env = std::getenv("FLOWWARP_THREADS");
        int n = 1;
        if (env) n = std::atoi(env);
        if (n < 1) n = 1;
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw > 0 && n > hw) n = hw;
        return n;
    }();
    return cached;
}

// Row-parallel loop. Each index is visited exactly once by exactly one
// thread, and every output cell is written by a single visit, so results are
// bit-identical for any thread count.
inline void parallel_for(int begin, int end, const std::function<void(int)>& body) {
    const int n = end - begin;
    const int threads = max_threads();
    if (threads <= 1 || n < 2 * threads) {
        for (int i = begin; i < end; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int lo = begin + t * chunk;
        const int hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace fwn
