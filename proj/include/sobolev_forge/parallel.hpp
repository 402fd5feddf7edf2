#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sobolev_forge {

namespace detail {
inline std::atomic<unsigned>& thread_setting()
{
    static std::atomic<unsigned> n{0};
    return n;
}
} // namespace detail

/// Worker count for parallel loops; 0 restores the default.
inline void set_thread_count(unsigned n) { detail::thread_setting() = n; }

/// Explicit setting, else SOBOLEV_FORGE_THREADS, else hardware concurrency.
inline unsigned thread_count()
{
    if (unsigned n = detail::thread_setting())
        return n;
    if (const char* env = std::getenv("SOBOLEV_FORGE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0)
                return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on a static partition; results must be written by index.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min<std::size_t>(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                    next = n;
                    return;
                }
            }
        });
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace sobolev_forge
