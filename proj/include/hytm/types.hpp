#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <thread>

namespace hytm {

using Word = std::uint64_t;
using Addr = std::size_t;
using LineId = std::size_t;
using TxId = std::uint64_t;

inline constexpr TxId kNoTx = 0;

enum class AbortCause : std::uint8_t {
    Conflict,
    Capacity,
    LockSubscription,
    Explicit,
    Spurious,
};

inline constexpr std::size_t kAbortCauseCount = 5;

inline constexpr std::array<AbortCause, kAbortCauseCount> kAllAbortCauses = {
    AbortCause::Conflict, AbortCause::Capacity, AbortCause::LockSubscription,
    AbortCause::Explicit, AbortCause::Spurious,
};

constexpr std::string_view to_string(AbortCause cause) {
    switch (cause) {
    case AbortCause::Conflict: return "conflict";
    case AbortCause::Capacity: return "capacity";
    case AbortCause::LockSubscription: return "lock";
    case AbortCause::Explicit: return "explicit";
    case AbortCause::Spurious: return "spurious";
    }
    return "unknown";
}

// Spin-then-yield waiting. The emulator is routinely run with more worker
// threads than cores, so every wait loop must eventually give up the CPU.
class Backoff {
public:
    void pause() {
        if (spins_ < kSpinLimit) {
            ++spins_;
#if defined(__x86_64__) || defined(__i386__)
            __builtin_ia32_pause();
#endif
        } else {
            std::this_thread::yield();
        }
    }
    void reset() { spins_ = 0; }

private:
    static constexpr unsigned kSpinLimit = 32;
    unsigned spins_ = 0;
};

class SpinLock {
public:
    void lock() {
        Backoff backoff;
        for (;;) {
            if (!held_.exchange(true, std::memory_order_acquire)) return;
            while (held_.load(std::memory_order_relaxed)) backoff.pause();
        }
    }
    bool try_lock() { return !held_.exchange(true, std::memory_order_acquire); }
    void unlock() { held_.store(false, std::memory_order_release); }

private:
    std::atomic<bool> held_{false};
};

}  // namespace hytm
