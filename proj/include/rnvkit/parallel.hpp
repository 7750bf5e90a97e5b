#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rnvkit {

/// Worker cap from RNVKIT_THREADS; 1 when unset or invalid.
inline int threads_from_env()
{
    const char* v = std::getenv("RNVKIT_THREADS");
    if (!v || !*v) return 1;
    try {
        return std::max(1, std::stoi(v));
    } catch (...) {
        return 1;
    }
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items are
/// claimed dynamically, so fn must not depend on execution order. The first
/// exception thrown by any item is rethrown after all workers join.
template <class Fn>
void parallel_for(int n, int workers, Fn&& fn)
{
    workers = std::clamp(workers, 1, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace rnvkit
