#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "hytm/stats.hpp"
#include "hytm/tm_memory.hpp"
#include "hytm/types.hpp"

namespace hytm {

struct HtmConfig {
    std::size_t read_capacity = 512;  // lines
    std::size_t write_capacity = 64;  // lines
    double spurious_abort_probability = 0.0;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

enum class HwStatus { Active, Doomed, Committed, Aborted };

// One emulated best-effort hardware transaction.
//
// Conflict detection is eager and at cacheline granularity: a read or write
// of a line write-owned by someone else aborts the requester, and claiming a
// line for writing dooms every other transaction subscribed to it. Writes are
// buffered and become visible only at commit. A doomed transaction keeps
// running until its next operation, which then fails with the doom cause.
//
// Construction is the begin; at most one active instance per thread.
class HwTx {
public:
    // `rng` drives spurious aborts and is only consulted when the configured
    // probability is positive.
    HwTx(TmHeap& heap, const HtmConfig& config, ThreadStats& stats, std::mt19937_64* rng = nullptr);
    ~HwTx();

    HwTx(const HwTx&) = delete;
    HwTx& operator=(const HwTx&) = delete;

    TxId id() const { return self_.id(); }
    HwStatus status() const;
    std::optional<AbortCause> abort_cause() const { return cause_; }

    // Reads the lock word into the read set; aborts if it is nonzero, and any
    // later committed write to its line dooms this transaction.
    bool subscribe_lock(Addr lock_addr);

    // nullopt means the transaction aborted; see abort_cause().
    std::optional<Word> read(Addr addr);
    bool write(Addr addr, Word value);
    bool commit();
    void abort(AbortCause cause);

    std::size_t read_set_size() const { return read_lines_.size(); }
    std::size_t write_line_count() const { return write_lines_.size(); }

private:
    bool active() const { return state_ == State::Active; }
    bool fail_if_doomed();
    bool add_to_read_set(LineId line, bool lock_subscription);
    void finish_abort(AbortCause cause);
    void release_all();

    enum class State { Active, Committed, Aborted };

    TmHeap& heap_;
    const HtmConfig& config_;
    ThreadStats& stats_;
    Subscriber self_;
    State state_ = State::Active;
    std::optional<AbortCause> cause_;
    std::vector<LineId> read_lines_;
    std::vector<LineId> write_lines_;
    std::vector<std::pair<Addr, Word>> write_buf_;
};

}  // namespace hytm
