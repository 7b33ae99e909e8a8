#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace eiarag {

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Results land at
/// their input index, so output order never depends on completion order.
/// The first exception thrown by any task is rethrown after all workers join.
template <typename Result, typename Fn>
std::vector<Result> parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
    std::vector<Result> results(n);
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) results[i] = fn(i);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    results[i] = fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

/// Bounds the number of callers inside a section (e.g. in-flight HTTP requests).
class ConcurrencyGate {
public:
    explicit ConcurrencyGate(std::size_t limit) : available_(std::max<std::size_t>(limit, 1)) {}

    class Ticket {
    public:
        explicit Ticket(ConcurrencyGate& gate) : gate_(gate) { gate_.acquire(); }
        ~Ticket() { gate_.release(); }
        Ticket(const Ticket&) = delete;
        Ticket& operator=(const Ticket&) = delete;

    private:
        ConcurrencyGate& gate_;
    };

    Ticket enter() { return Ticket(*this); }

private:
    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return available_ > 0; });
        --available_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            ++available_;
        }
        cv_.notify_one();
    }

    std::mutex mutex_;
    std::condition_variable cv_;
    std::size_t available_;
};

/// Time source injected into everything that measures latency or reads the
/// date, so tests can pin both.
class Clock {
public:
    using duration = std::chrono::nanoseconds;

    virtual ~Clock() = default;
    virtual duration now() = 0;
    /// Current date as YYYY-MM-DD.
    virtual std::string today() = 0;
};

class SystemClock final : public Clock {
public:
    duration now() override {
        return std::chrono::duration_cast<duration>(std::chrono::steady_clock::now().time_since_epoch());
    }

    std::string today() override {
        const auto days = std::chrono::floor<std::chrono::days>(std::chrono::system_clock::now());
        const std::chrono::year_month_day ymd{days};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        return buf;
    }
};

/// Advances by a fixed step on every `now()` call.
class FakeClock final : public Clock {
public:
    explicit FakeClock(duration step = std::chrono::microseconds(100), std::string date = "2024-01-01")
        : step_(step), date_(std::move(date)) {}

    duration now() override { return step_ * (ticks_++); }
    std::string today() override { return date_; }

private:
    duration step_;
    std::string date_;
    std::atomic<std::int64_t> ticks_{0};
};

}  // namespace eiarag
