#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hytm/types.hpp"

namespace hytm {

// Global version clock shared by every writing commit, hardware or software.
class GlobalClock {
public:
    std::uint64_t now() const { return value_.load(std::memory_order_acquire); }
    // Advances the clock and returns the new value.
    std::uint64_t tick() { return value_.fetch_add(1, std::memory_order_acq_rel) + 1; }

private:
    std::atomic<std::uint64_t> value_{0};
};

// Doom target of an active hardware transaction. Writers that claim a line
// the transaction has read flip it from Active to Doomed; the transaction
// itself flips it to Sealed at its commit point. Whichever transition lands
// first wins.
class Subscriber {
public:
    explicit Subscriber(TxId id) : id_(id) {}

    TxId id() const { return id_; }

    bool doom(AbortCause cause) {
        std::uint32_t expected = kActive;
        return state_.compare_exchange_strong(expected, kDoomedBase + static_cast<std::uint32_t>(cause));
    }

    bool seal() {
        std::uint32_t expected = kActive;
        return state_.compare_exchange_strong(expected, kSealed);
    }

    std::optional<AbortCause> doom_cause() const {
        auto s = state_.load();
        if (s < kDoomedBase) return std::nullopt;
        return static_cast<AbortCause>(s - kDoomedBase);
    }

private:
    static constexpr std::uint32_t kActive = 0;
    static constexpr std::uint32_t kSealed = 1;
    static constexpr std::uint32_t kDoomedBase = 2;

    TxId id_;
    std::atomic<std::uint32_t> state_{kActive};
};

// Per-cacheline conflict metadata.
class OwnershipRecord {
public:
    // Bumped once per commit that wrote the line.
    std::uint64_t version() const { return version_.load(); }
    // Clock value of the last writing commit.
    std::uint64_t stamp() const { return stamp_.load(); }
    TxId writer() const { return writer_.load(); }

    std::size_t reader_count() const;
    bool has_reader(TxId id) const;

private:
    friend class TmHeap;

    struct Reader {
        Subscriber* tx;
        bool lock_subscription;
    };

    std::atomic<std::uint64_t> version_{0};
    std::atomic<std::uint64_t> stamp_{0};
    std::atomic<TxId> writer_{kNoTx};
    mutable SpinLock guard_;
    std::vector<Reader> readers_;
};

// Word-addressed shared memory partitioned into cachelines, each with its
// own ownership record.
//
// Words are only mutated by commit publication (hardware, software, or
// lock-path) and by raw_write, which is reserved for quiescent setup.
class TmHeap {
public:
    static constexpr std::size_t kDefaultWordsPerLine = 8;

    TmHeap(std::size_t n_words, std::size_t words_per_line = kDefaultWordsPerLine);

    TmHeap(const TmHeap&) = delete;
    TmHeap& operator=(const TmHeap&) = delete;

    std::size_t size() const { return words_.size(); }
    std::size_t words_per_line() const { return words_per_line_; }
    std::size_t line_count() const { return line_count_; }

    LineId line_of(Addr addr) const;
    Addr line_begin(LineId line) const { return line * words_per_line_; }

    // Non-transactional access; callers guarantee quiescence.
    Word raw_read(Addr addr) const;
    void raw_write(Addr addr, Word value);

    const OwnershipRecord& orec(LineId line) const;

    GlobalClock& clock() { return clock_; }
    const GlobalClock& clock() const { return clock_; }
    TxId next_tx_id() { return next_tx_id_.fetch_add(1, std::memory_order_relaxed); }

    // -- Conflict machinery shared by the hardware emulator, the STM and the
    //    lock paths. Addresses and lines are assumed validated by the caller.

    Word load(Addr addr) const { return words_[addr].load(std::memory_order_acquire); }
    void store(Addr addr, Word value) { words_[addr].store(value, std::memory_order_release); }

    // Adds `tx` to the line's reader set. Fails (requester loses) when the
    // line is write-owned by another transaction.
    bool subscribe(LineId line, Subscriber& tx, bool lock_subscription);
    void unsubscribe(LineId line, const Subscriber& tx);

    // Claims exclusive write ownership and dooms every other subscribed
    // reader. Fails without side effects if another owner holds the line.
    bool try_claim(LineId line, TxId owner, const Subscriber* self = nullptr);
    // Claims, waiting for any current owner to finish.
    void claim(LineId line, TxId owner);
    // Drops ownership without publishing.
    void release(LineId line, TxId owner);
    // Marks the line as written by a commit stamped `stamp` and drops ownership.
    void publish(LineId line, TxId owner, std::uint64_t stamp);

    // Waits until no transaction owns `line`.
    void wait_unowned(LineId line) const;

    // Indivisible read-modify-write through the conflict machinery: claims the
    // line, dooms its subscribers, applies `update` and publishes. When
    // `update` returns nullopt nothing is written and no version changes.
    // Returns the previous value.
    Word update(Addr addr, const std::function<std::optional<Word>(Word)>& update);

private:
    void check(Addr addr) const;

    std::size_t words_per_line_;
    std::size_t line_count_;
    std::vector<std::atomic<Word>> words_;
    std::vector<OwnershipRecord> orecs_;
    GlobalClock clock_;
    std::atomic<TxId> next_tx_id_{1};
};

}  // namespace hytm
