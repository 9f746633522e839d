#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace netfact {

// Deterministic work sharing. Items are split into fixed-size chunks; worker
// threads grab chunks by atomic counter. Which thread runs a chunk varies,
// but when callers accumulate into per-chunk slots and reduce the slots
// sequentially the floating-point result is byte-identical for any thread
// count, including 1.

inline constexpr std::size_t kParallelChunk = 16;

namespace parallel {

inline int& thread_setting() {
    static int value = 1;
    return value;
}

inline void set_max_threads(int n) { thread_setting() = n < 1 ? 1 : n; }

inline int max_threads() { return thread_setting(); }

inline std::size_t chunk_count(std::size_t n) {
    return (n + kParallelChunk - 1) / kParallelChunk;
}

// body(begin, end, chunk_index); chunks are [c*K, min(n, (c+1)*K)).
template <typename Body>
void for_chunks(std::size_t n, Body&& body) {
    if (n == 0) return;
    const std::size_t chunks = chunk_count(n);
    const int want = max_threads();
    const std::size_t workers =
        std::min<std::size_t>(chunks, want < 1 ? 1 : static_cast<std::size_t>(want));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            const std::size_t begin = c * kParallelChunk;
            const std::size_t end = std::min(n, begin + kParallelChunk);
            body(begin, end, c);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            const std::size_t begin = c * kParallelChunk;
            const std::size_t end = std::min(n, begin + kParallelChunk);
            body(begin, end, c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
}

// Independent per-item work (each i touched exactly once).
template <typename Body>
void for_each_index(std::size_t n, Body&& body) {
    for_chunks(n, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) body(i);
    });
}

}  // namespace parallel

}  // namespace netfact
