#pragma once

// Deterministic fork-join helper. Work items write to preassigned slots, so
// results are identical for any worker count; only wall time changes.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace branchlens {

// Runs fn(i) for i in [0, count). With workers <= 1 runs inline.
// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
    if (count == 0) return;
    std::size_t n_threads = workers <= 1 ? 1 : std::min<std::size_t>(workers, count);
    if (n_threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t]() {
            try {
                // Strided assignment: thread t owns items t, t+T, t+2T, ...
                for (std::size_t i = t; i < count; i += n_threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace branchlens
