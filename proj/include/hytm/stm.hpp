#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "hytm/stats.hpp"
#include "hytm/tm_memory.hpp"
#include "hytm/types.hpp"

namespace hytm {

// The global lock counter lives in word 0 of every heap that runs hybrid
// policies. Its line must hold no other data.
inline constexpr Addr kGlobalLockAddr = 0;

// Counter of in-progress STM fallback episodes. Entering and leaving go
// through the heap's conflict machinery, so each change dooms every hardware
// transaction subscribed to the counter.
class GlobalLock {
public:
    explicit GlobalLock(TmHeap& heap, Addr addr = kGlobalLockAddr);

    // Throws std::logic_error on an exit with no matching enter.
    void enter();
    void exit();

    Word value() const { return heap_.load(addr_); }
    Addr address() const { return addr_; }

    // Episodes currently held by the calling thread (across all heaps).
    static int held_by_this_thread();

private:
    TmHeap& heap_;
    Addr addr_;
};

enum class SwStatus { Active, Committed, Aborted };

// Word-based software transaction with lazy write-back and per-line version
// validation against the heap's global clock.
class SwTx {
public:
    // Requires the calling thread to hold a GlobalLock episode.
    SwTx(TmHeap& heap, ThreadStats& stats);
    ~SwTx();

    SwTx(const SwTx&) = delete;
    SwTx& operator=(const SwTx&) = delete;

    TxId id() const { return id_; }
    SwStatus status() const { return status_; }
    std::uint64_t start_stamp() const { return start_stamp_; }

    // nullopt means validation failed and the transaction aborted.
    std::optional<Word> read(Addr addr);
    void write(Addr addr, Word value);
    bool commit();
    void abort();

    struct ReadEntry {
        Addr addr;
        std::uint64_t version;
    };
    const std::vector<ReadEntry>& read_log() const { return read_log_; }
    const std::vector<std::pair<Addr, Word>>& write_log() const { return write_log_; }

private:
    bool validate() const;
    void finish(SwStatus status);

    TmHeap& heap_;
    ThreadStats& stats_;
    TxId id_;
    SwStatus status_ = SwStatus::Active;
    std::uint64_t start_stamp_;
    std::vector<ReadEntry> read_log_;
    std::vector<std::pair<Addr, Word>> write_log_;
};

}  // namespace hytm
