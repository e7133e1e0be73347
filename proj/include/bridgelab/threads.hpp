#ifndef BRIDGELAB_THREADS_HPP
#define BRIDGELAB_THREADS_HPP

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace bridgelab {

inline int thread_budget() {
    if (const char* env = std::getenv("BRIDGELAB_THREADS")) {
        int k = std::atoi(env);
        if (k >= 1) return k;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

// static block partition; each index written by exactly one thread, so results
// are bit-identical for any thread count
template <typename F>
void parallel_for(int n, F&& body) {
    int k = std::min(thread_budget(), n);
    if (k <= 1 || n < 64) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(k);
    int chunk = (n + k - 1) / k;
    for (int t = 0; t < k; ++t) {
        int lo = t * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace bridgelab

#endif
