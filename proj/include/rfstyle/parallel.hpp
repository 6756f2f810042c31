#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace rfstyle {

/// Runs body(i) for i in [0, n) over contiguous blocks. Each index is written
/// by exactly one worker, so results do not depend on the thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t block = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * block;
        const std::size_t hi = std::min(n, lo + block);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
}

}  // namespace rfstyle
