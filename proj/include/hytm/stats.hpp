#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "hytm/types.hpp"

namespace hytm {

// Per-thread event counters. Hot paths bump these without synchronization;
// sheets are merged only after the owning worker has joined.
struct ThreadStats {
    std::uint64_t htm_begins = 0;
    std::uint64_t htm_commits = 0;
    std::array<std::uint64_t, kAbortCauseCount> htm_aborts{};
    std::uint64_t htm_retries = 0;
    std::uint64_t stm_begins = 0;
    std::uint64_t stm_commits = 0;
    std::uint64_t stm_aborts = 0;
    std::uint64_t lock_commits = 0;
    // STM episodes (global counter enter/exit pairs) plus non-speculative lock
    // acquisitions taken by the HTM+lock and HLE fallbacks.
    std::uint64_t fallback_episodes = 0;

    std::uint64_t& aborts(AbortCause cause) { return htm_aborts[static_cast<std::size_t>(cause)]; }
    std::uint64_t aborts(AbortCause cause) const { return htm_aborts[static_cast<std::size_t>(cause)]; }

    std::uint64_t total_aborts() const {
        std::uint64_t sum = 0;
        for (auto n : htm_aborts) sum += n;
        return sum;
    }

    std::uint64_t completed_sections() const { return htm_commits + stm_commits + lock_commits; }

    ThreadStats& operator+=(const ThreadStats& other);
    friend bool operator==(const ThreadStats&, const ThreadStats&) = default;
};

// Counter columns in CSV order.
inline constexpr std::size_t kCounterCount = 13;
inline constexpr std::array<std::string_view, kCounterCount> kCounterNames = {
    "htm_begins",      "htm_commits",     "aborts_conflict", "aborts_capacity", "aborts_lock",
    "aborts_explicit", "aborts_spurious", "htm_retries",     "stm_begins",      "stm_commits",
    "stm_aborts",      "lock_commits",    "fallback_episodes",
};

std::array<std::uint64_t, kCounterCount> counter_values(const ThreadStats& stats);

}  // namespace hytm
