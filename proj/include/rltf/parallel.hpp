// Deterministic work distribution: results land in index-addressed slots, so
// the outcome is identical for any worker count.  Worker count comes from
// RLTF_THREADS, capped by hardware parallelism.

#pragma once

#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace rltf {

inline int worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("RLTF_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && v < static_cast<long>(hw)) return static_cast<int>(v);
        if (v >= static_cast<long>(hw)) return static_cast<int>(hw);
    }
    return static_cast<int>(hw);
}

// body(i) must only write to state owned by index i.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
    int workers = worker_count();
    if (workers <= 1 || n < 2) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::int64_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace rltf
