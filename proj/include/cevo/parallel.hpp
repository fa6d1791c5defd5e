// Copyright (c) 2026, The conceptevo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace cevo {

/// Runs `fn(i)` for i in [0, n) on at most `max_inflight` threads. Intended for
/// I/O-bound service calls; compute kernels use OpenMP instead. The first
/// exception thrown by any task is rethrown after all workers join.
inline void bounded_for(std::size_t n, std::size_t max_inflight,
                        const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(max_inflight, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cevo
