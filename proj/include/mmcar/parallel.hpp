#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace mmcar {

// Runs fn(i) for i in [0, n). Work items must be independent; callers that
// aggregate results do so afterwards in index order, so the outcome is
// identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t t = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += t) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mmcar
