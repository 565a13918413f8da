#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "hytm/htm_emu.hpp"
#include "hytm/stats.hpp"
#include "hytm/stm.hpp"
#include "hytm/tm_memory.hpp"

namespace hytm {

// Uniform memory handle seen by critical-section bodies. The same body runs
// unchanged under a hardware transaction, a software transaction, or a lock.
class TxAccess {
public:
    virtual ~TxAccess() = default;
    virtual Word read(Addr addr) = 0;
    virtual void write(Addr addr, Word value) = 0;
};

// Thrown out of a body when the enclosing attempt has aborted. Bodies must
// let it propagate.
struct TxAborted {};

// Non-owning reference to a callable `void(TxAccess&)`.
class TxBody {
public:
    template <typename F>
        requires(!std::is_same_v<std::remove_cvref_t<F>, TxBody> && std::is_invocable_v<F&, TxAccess&>)
    TxBody(F&& fn)  // NOLINT(google-explicit-constructor)
        : object_(const_cast<void*>(static_cast<const void*>(std::addressof(fn)))),
          call_([](void* obj, TxAccess& access) { (*static_cast<std::remove_reference_t<F>*>(obj))(access); }) {}

    void operator()(TxAccess& access) const { call_(object_, access); }

private:
    void* object_;
    void (*call_)(void*, TxAccess&);
};

enum class PolicyKind {
    CoarseLock,
    StmOnly,
    HtmAtomicLock,
    HtmSpinLock,
    Hle,
    RndHyTm,
    FxHyTm,
    StAdHyTm,
    DyAdHyTm,
};

inline constexpr std::array<PolicyKind, 9> kAllPolicies = {
    PolicyKind::CoarseLock, PolicyKind::StmOnly, PolicyKind::HtmAtomicLock,
    PolicyKind::HtmSpinLock, PolicyKind::Hle,    PolicyKind::RndHyTm,
    PolicyKind::FxHyTm,     PolicyKind::StAdHyTm, PolicyKind::DyAdHyTm,
};

std::string_view to_string(PolicyKind kind);
// Accepts the names printed by to_string: lock, stm, htm-alock, htm-spin,
// hle, rnd, fx, stad, dyad.
PolicyKind parse_policy(std::string_view name);

bool uses_hardware(PolicyKind kind);
bool uses_retries(PolicyKind kind);

struct FixedRetries {
    unsigned n = 10;
    friend bool operator==(const FixedRetries&, const FixedRetries&) = default;
};
struct RetryRange {
    unsigned lo = 1;
    unsigned hi = 50;
    friend bool operator==(const RetryRange&, const RetryRange&) = default;
};
struct TunedRetries {
    unsigned n = 10;
    friend bool operator==(const TunedRetries&, const TunedRetries&) = default;
};
using RetrySpec = std::variant<FixedRetries, RetryRange, TunedRetries>;

// "fixed:N", "range:LO:HI", "tuned:N".
std::string to_string(const RetrySpec& spec);
// Parses "LO:HI"; throws std::invalid_argument unless 1 <= LO <= HI.
RetryRange parse_retry_range(std::string_view text);
// Parses "LO:HI,LO:HI,...".
std::vector<RetryRange> parse_retry_ranges(std::string_view text);

RetrySpec default_retry_spec(PolicyKind kind);

struct PolicyConfig {
    PolicyKind kind = PolicyKind::DyAdHyTm;
    RetrySpec retries = FixedRetries{};
    HtmConfig htm{};
    std::uint64_t rng_seed = 0;

    void validate() const;
};

// Draws the hardware retry budget for one critical section.
unsigned draw_tries(const RetrySpec& spec, std::mt19937_64& rng);

enum class Path { Hardware, Software, Lock };
std::string_view to_string(Path path);

struct CommitPath {
    Path path = Path::Lock;
    unsigned retries_used = 0;
};

// Attempt-level record of one critical section, for trace audits.
struct SectionTrace {
    Path path = Path::Lock;
    unsigned hw_attempts = 0;
    std::vector<AbortCause> hw_aborts;
};

struct ThreadContext {
    explicit ThreadContext(unsigned id = 0, std::uint64_t seed = 0) : thread_id(id), rng(seed) {}

    unsigned thread_id;
    std::mt19937_64 rng;
    ThreadStats stats;
    std::vector<SectionTrace>* trace = nullptr;
};

// Shared state every policy runner coordinates through: the heap plus the
// locks. Word 0 is the global STM counter, word `words_per_line` the spin
// lock used by HTM+spinlock and HLE; both lines are reserved.
class SyncDomain {
public:
    explicit SyncDomain(TmHeap& heap);

    static std::size_t reserved_words(std::size_t words_per_line) { return 2 * words_per_line; }

    TmHeap& heap() { return heap_; }
    GlobalLock& counter() { return counter_; }
    Addr spinlock_addr() const { return spinlock_addr_; }
    std::mutex& coarse_mutex() { return coarse_; }

private:
    TmHeap& heap_;
    GlobalLock counter_;
    Addr spinlock_addr_;
    std::mutex coarse_;
};

enum class LockFlavor { AtomicCounter, Spin };

CommitPath run_coarse_lock(TxBody body, SyncDomain& domain, ThreadContext& ctx);
CommitPath run_stm_only(TxBody body, SyncDomain& domain, ThreadContext& ctx);
CommitPath run_htm_lock(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx,
                        LockFlavor flavor);
CommitPath run_hle(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx);
// RNDHyTM, FxHyTM and StAdHyTM; they differ only in the retry spec.
CommitPath run_hytm(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx);
CommitPath run_dyad(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx);

// Dispatches on cfg.kind.
CommitPath run_section(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx);

// Runs the tuning workload once under the given configuration.
using TuningWorkload = std::function<void(const PolicyConfig& cfg, std::uint64_t seed)>;

struct TuningResult {
    TunedRetries tuned;
    RetryRange best_range;
    std::vector<double> mean_seconds;  // per candidate range
};

// Offline sweep for StAdHyTM: runs the workload `trials` times under a random
// retry budget from each candidate range, keeps the range with the lowest mean
// completion time (ties go to the earlier range) and fixes the retry count at
// its midpoint.
TuningResult tune_stad(const TuningWorkload& workload, const PolicyConfig& base, std::span<const RetryRange> ranges,
                       unsigned trials, std::uint64_t seed);

}  // namespace hytm
