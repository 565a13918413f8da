#include "hytm/stats.hpp"

namespace hytm {

ThreadStats& ThreadStats::operator+=(const ThreadStats& other) {
    htm_begins += other.htm_begins;
    htm_commits += other.htm_commits;
    for (std::size_t i = 0; i < htm_aborts.size(); ++i) htm_aborts[i] += other.htm_aborts[i];
    htm_retries += other.htm_retries;
    stm_begins += other.stm_begins;
    stm_commits += other.stm_commits;
    stm_aborts += other.stm_aborts;
    lock_commits += other.lock_commits;
    fallback_episodes += other.fallback_episodes;
    return *this;
}

std::array<std::uint64_t, kCounterCount> counter_values(const ThreadStats& s) {
    return {
        s.htm_begins,
        s.htm_commits,
        s.aborts(AbortCause::Conflict),
        s.aborts(AbortCause::Capacity),
        s.aborts(AbortCause::LockSubscription),
        s.aborts(AbortCause::Explicit),
        s.aborts(AbortCause::Spurious),
        s.htm_retries,
        s.stm_begins,
        s.stm_commits,
        s.stm_aborts,
        s.lock_commits,
        s.fallback_episodes,
    };
}

}  // namespace hytm
