#include "hytm/policies.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <stdexcept>
#include <string>
#include <thread>

#include "hytm/rng.hpp"

namespace hytm {

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
    case PolicyKind::CoarseLock: return "lock";
    case PolicyKind::StmOnly: return "stm";
    case PolicyKind::HtmAtomicLock: return "htm-alock";
    case PolicyKind::HtmSpinLock: return "htm-spin";
    case PolicyKind::Hle: return "hle";
    case PolicyKind::RndHyTm: return "rnd";
    case PolicyKind::FxHyTm: return "fx";
    case PolicyKind::StAdHyTm: return "stad";
    case PolicyKind::DyAdHyTm: return "dyad";
    }
    return "unknown";
}

PolicyKind parse_policy(std::string_view name) {
    for (auto kind : kAllPolicies) {
        if (to_string(kind) == name) return kind;
    }
    throw std::invalid_argument("unknown policy '" + std::string(name) +
                                "' (expected lock, stm, htm-alock, htm-spin, hle, rnd, fx, stad or dyad)");
}

bool uses_hardware(PolicyKind kind) { return kind != PolicyKind::CoarseLock && kind != PolicyKind::StmOnly; }

bool uses_retries(PolicyKind kind) { return uses_hardware(kind) && kind != PolicyKind::Hle; }

std::string to_string(const RetrySpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, FixedRetries>) {
                return "fixed:" + std::to_string(s.n);
            } else if constexpr (std::is_same_v<T, RetryRange>) {
                return "range:" + std::to_string(s.lo) + ":" + std::to_string(s.hi);
            } else {
                return "tuned:" + std::to_string(s.n);
            }
        },
        spec);
}

namespace {

unsigned parse_unsigned(std::string_view text, std::string_view what) {
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw std::invalid_argument("malformed " + std::string(what) + " '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace

RetryRange parse_retry_range(std::string_view text) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) {
        throw std::invalid_argument("malformed retry range '" + std::string(text) + "' (expected LO:HI)");
    }
    RetryRange range{parse_unsigned(text.substr(0, colon), "retry range bound"),
                     parse_unsigned(text.substr(colon + 1), "retry range bound")};
    if (range.lo < 1 || range.lo > range.hi) {
        throw std::invalid_argument("invalid retry range '" + std::string(text) + "' (need 1 <= LO <= HI)");
    }
    return range;
}

std::vector<RetryRange> parse_retry_ranges(std::string_view text) {
    if (text.empty()) throw std::invalid_argument("no retry ranges given");
    std::vector<RetryRange> ranges;
    for (;;) {
        auto comma = text.find(',');
        ranges.push_back(parse_retry_range(text.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return ranges;
}

RetrySpec default_retry_spec(PolicyKind kind) {
    switch (kind) {
    case PolicyKind::RndHyTm: return RetryRange{1, 50};
    case PolicyKind::StAdHyTm: return TunedRetries{10};
    default: return FixedRetries{10};
    }
}

void PolicyConfig::validate() const {
    htm.validate();
    if (const auto* range = std::get_if<RetryRange>(&retries)) {
        if (range->lo < 1 || range->lo > range->hi) throw std::invalid_argument("PolicyConfig: need 1 <= lo <= hi");
    }
    bool needs_fixed = kind == PolicyKind::HtmAtomicLock || kind == PolicyKind::HtmSpinLock ||
                       kind == PolicyKind::DyAdHyTm || kind == PolicyKind::FxHyTm;
    if (needs_fixed && !std::holds_alternative<FixedRetries>(retries)) {
        throw std::invalid_argument("policy " + std::string(to_string(kind)) + " needs a fixed retry count");
    }
    if (kind == PolicyKind::RndHyTm && !std::holds_alternative<RetryRange>(retries)) {
        throw std::invalid_argument("policy rnd needs a retry range");
    }
    if (kind == PolicyKind::StAdHyTm && !std::holds_alternative<TunedRetries>(retries)) {
        throw std::invalid_argument("policy stad needs a tuned retry count");
    }
}

unsigned draw_tries(const RetrySpec& spec, std::mt19937_64& rng) {
    if (const auto* range = std::get_if<RetryRange>(&spec)) {
        return static_cast<unsigned>(uniform_between(rng, range->lo, range->hi));
    }
    if (const auto* fixed = std::get_if<FixedRetries>(&spec)) return fixed->n;
    return std::get<TunedRetries>(spec).n;
}

std::string_view to_string(Path path) {
    switch (path) {
    case Path::Hardware: return "hardware";
    case Path::Software: return "software";
    case Path::Lock: return "lock";
    }
    return "unknown";
}

SyncDomain::SyncDomain(TmHeap& heap)
    : heap_(heap), counter_(heap, kGlobalLockAddr), spinlock_addr_(heap.words_per_line()) {
    if (heap.size() < reserved_words(heap.words_per_line())) {
        throw std::invalid_argument("SyncDomain: heap lacks the two reserved lock lines");
    }
}

namespace {

class HwAccess final : public TxAccess {
public:
    explicit HwAccess(HwTx& tx) : tx_(tx) {}
    Word read(Addr addr) override {
        auto value = tx_.read(addr);
        if (!value) throw TxAborted{};
        return *value;
    }
    void write(Addr addr, Word value) override {
        if (!tx_.write(addr, value)) throw TxAborted{};
    }

private:
    HwTx& tx_;
};

class SwAccess final : public TxAccess {
public:
    explicit SwAccess(SwTx& tx) : tx_(tx) {}
    Word read(Addr addr) override {
        auto value = tx_.read(addr);
        if (!value) throw TxAborted{};
        return *value;
    }
    void write(Addr addr, Word value) override { tx_.write(addr, value); }

private:
    SwTx& tx_;
};

// Non-speculative execution by the holder of an exclusive lock. Reads wait
// out any in-flight hardware or software commit on the line; writes are
// buffered and published together so each written line's version moves once.
class DirectAccess final : public TxAccess {
public:
    explicit DirectAccess(TmHeap& heap) : heap_(heap) {}

    Word read(Addr addr) override {
        auto line = heap_.line_of(addr);
        auto it = std::find_if(buffer_.begin(), buffer_.end(), [addr](const auto& e) { return e.first == addr; });
        if (it != buffer_.end()) return it->second;
        heap_.wait_unowned(line);
        return heap_.load(addr);
    }

    void write(Addr addr, Word value) override {
        heap_.line_of(addr);
        auto it = std::find_if(buffer_.begin(), buffer_.end(), [addr](const auto& e) { return e.first == addr; });
        if (it != buffer_.end()) {
            it->second = value;
        } else {
            buffer_.emplace_back(addr, value);
        }
    }

    void publish() {
        if (buffer_.empty()) return;
        std::vector<LineId> lines;
        lines.reserve(buffer_.size());
        for (const auto& entry : buffer_) lines.push_back(heap_.line_of(entry.first));
        std::sort(lines.begin(), lines.end());
        lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
        auto owner = heap_.next_tx_id();
        for (auto line : lines) heap_.claim(line, owner);
        auto stamp = heap_.clock().tick();
        for (const auto& [addr, value] : buffer_) heap_.store(addr, value);
        for (auto line : lines) heap_.publish(line, owner, stamp);
        buffer_.clear();
    }

private:
    TmHeap& heap_;
    std::vector<std::pair<Addr, Word>> buffer_;
};

void retry_backoff(unsigned failures) {
    if (failures < 4) {
        Backoff b;
        for (unsigned i = 0; i < (8u << failures); ++i) b.pause();
        return;
    }
    for (unsigned i = 0; i < std::min(failures, 16u); ++i) std::this_thread::yield();
}

// One speculative attempt, subscribed to `lock_addr`. Returns the abort
// cause, or nullopt on commit.
std::optional<AbortCause> hw_attempt(TxBody body, TmHeap& heap, const HtmConfig& htm, ThreadContext& ctx,
                                     Addr lock_addr) {
    HwTx tx(heap, htm, ctx.stats, &ctx.rng);
    if (!tx.subscribe_lock(lock_addr)) return tx.abort_cause();
    HwAccess access(tx);
    try {
        body(access);
    } catch (const TxAborted&) {
        if (tx.status() == HwStatus::Active || tx.status() == HwStatus::Doomed) tx.abort(AbortCause::Explicit);
        return tx.abort_cause();
    }
    if (tx.commit()) return std::nullopt;
    return tx.abort_cause();
}

// Retry-budget bookkeeping shared by every hardware-first policy.
class AttemptLoop {
public:
    explicit AttemptLoop(ThreadContext& ctx) : ctx_(ctx) {
        if (ctx_.trace != nullptr) trace_ = &ctx_.trace->emplace_back();
    }

    std::optional<AbortCause> attempt(TxBody body, TmHeap& heap, const HtmConfig& htm, Addr lock_addr) {
        if (attempts_ > 0) {
            ++ctx_.stats.htm_retries;
            // Let a preempted fallback holder run before trying again.
            std::this_thread::yield();
        }
        ++attempts_;
        auto cause = hw_attempt(body, heap, htm, ctx_, lock_addr);
        if (trace_ != nullptr) {
            trace_->hw_attempts = attempts_;
            if (cause) trace_->hw_aborts.push_back(*cause);
        }
        return cause;
    }

    CommitPath done(Path path) {
        if (trace_ != nullptr) trace_->path = path;
        return {path, attempts_ == 0 ? 0 : attempts_ - 1};
    }

private:
    ThreadContext& ctx_;
    SectionTrace* trace_ = nullptr;
    unsigned attempts_ = 0;
};

void run_stm_episode(TxBody body, SyncDomain& domain, ThreadContext& ctx) {
    struct Episode {
        GlobalLock& lock;
        explicit Episode(GlobalLock& l) : lock(l) { lock.enter(); }
        ~Episode() { lock.exit(); }
    } episode(domain.counter());
    ++ctx.stats.fallback_episodes;

    for (unsigned failures = 0;; ++failures) {
        SwTx tx(domain.heap(), ctx.stats);
        SwAccess access(tx);
        try {
            body(access);
            if (tx.commit()) return;
        } catch (const TxAborted&) {
            if (tx.status() == SwStatus::Active) tx.abort();
        }
        retry_backoff(failures);
    }
}

void acquire_exclusive(TmHeap& heap, Addr addr, LockFlavor flavor) {
    Backoff backoff;
    for (;;) {
        while (heap.load(addr) != 0) backoff.pause();
        Word old;
        if (flavor == LockFlavor::AtomicCounter) {
            old = heap.update(addr, [](Word v) -> std::optional<Word> {
                if (v != 0) return std::nullopt;
                return v + 1;
            });
        } else {
            old = heap.update(addr, [](Word) -> std::optional<Word> { return 1; });
        }
        if (old == 0) return;
        backoff.pause();
    }
}

void release_exclusive(TmHeap& heap, Addr addr) {
    heap.update(addr, [](Word) -> std::optional<Word> { return 0; });
}

CommitPath run_lock_path(TxBody body, TmHeap& heap, Addr lock_addr, LockFlavor flavor, ThreadContext& ctx,
                         AttemptLoop& loop) {
    acquire_exclusive(heap, lock_addr, flavor);
    struct Release {
        TmHeap& heap;
        Addr addr;
        ~Release() { release_exclusive(heap, addr); }
    } release{heap, lock_addr};
    ++ctx.stats.fallback_episodes;
    DirectAccess access(heap);
    body(access);
    access.publish();
    ++ctx.stats.lock_commits;
    return loop.done(Path::Lock);
}

long initial_tries(const PolicyConfig& cfg, ThreadContext& ctx) {
    return static_cast<long>(draw_tries(cfg.retries, ctx.rng));
}

const FixedRetries& require_fixed(const PolicyConfig& cfg) {
    const auto* fixed = std::get_if<FixedRetries>(&cfg.retries);
    if (fixed == nullptr) throw std::invalid_argument("policy needs a fixed retry count");
    return *fixed;
}

}  // namespace

CommitPath run_coarse_lock(TxBody body, SyncDomain& domain, ThreadContext& ctx) {
    std::lock_guard lock(domain.coarse_mutex());
    DirectAccess access(domain.heap());
    body(access);
    access.publish();
    ++ctx.stats.lock_commits;
    if (ctx.trace != nullptr) ctx.trace->push_back({Path::Lock, 0, {}});
    return {Path::Lock, 0};
}

CommitPath run_stm_only(TxBody body, SyncDomain& domain, ThreadContext& ctx) {
    run_stm_episode(body, domain, ctx);
    if (ctx.trace != nullptr) ctx.trace->push_back({Path::Software, 0, {}});
    return {Path::Software, 0};
}

CommitPath run_htm_lock(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx,
                        LockFlavor flavor) {
    long tries = require_fixed(cfg).n;
    auto& heap = domain.heap();
    Addr lock_addr = flavor == LockFlavor::AtomicCounter ? domain.counter().address() : domain.spinlock_addr();
    AttemptLoop loop(ctx);
    for (;;) {
        if (!loop.attempt(body, heap, cfg.htm, lock_addr)) return loop.done(Path::Hardware);
        if (--tries < 0) break;
    }
    return run_lock_path(body, heap, lock_addr, flavor, ctx, loop);
}

CommitPath run_hle(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx) {
    auto& heap = domain.heap();
    AttemptLoop loop(ctx);
    if (!loop.attempt(body, heap, cfg.htm, domain.spinlock_addr())) return loop.done(Path::Hardware);
    return run_lock_path(body, heap, domain.spinlock_addr(), LockFlavor::Spin, ctx, loop);
}

CommitPath run_hytm(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx) {
    long tries = initial_tries(cfg, ctx);
    AttemptLoop loop(ctx);
    for (;;) {
        if (!loop.attempt(body, domain.heap(), cfg.htm, domain.counter().address())) return loop.done(Path::Hardware);
        if (--tries < 0) break;
    }
    run_stm_episode(body, domain, ctx);
    return loop.done(Path::Software);
}

CommitPath run_dyad(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx) {
    long tries = require_fixed(cfg).n;
    AttemptLoop loop(ctx);
    for (;;) {
        auto cause = loop.attempt(body, domain.heap(), cfg.htm, domain.counter().address());
        if (!cause) return loop.done(Path::Hardware);
        if (*cause == AbortCause::Capacity) {
            // One last hardware attempt, unless that was it already.
            tries = tries > 0 ? 0 : -1;
        } else {
            --tries;
        }
        if (tries < 0) break;
    }
    run_stm_episode(body, domain, ctx);
    return loop.done(Path::Software);
}

CommitPath run_section(TxBody body, SyncDomain& domain, const PolicyConfig& cfg, ThreadContext& ctx) {
    switch (cfg.kind) {
    case PolicyKind::CoarseLock: return run_coarse_lock(body, domain, ctx);
    case PolicyKind::StmOnly: return run_stm_only(body, domain, ctx);
    case PolicyKind::HtmAtomicLock: return run_htm_lock(body, domain, cfg, ctx, LockFlavor::AtomicCounter);
    case PolicyKind::HtmSpinLock: return run_htm_lock(body, domain, cfg, ctx, LockFlavor::Spin);
    case PolicyKind::Hle: return run_hle(body, domain, cfg, ctx);
    case PolicyKind::RndHyTm:
    case PolicyKind::FxHyTm:
    case PolicyKind::StAdHyTm: return run_hytm(body, domain, cfg, ctx);
    case PolicyKind::DyAdHyTm: return run_dyad(body, domain, cfg, ctx);
    }
    throw std::logic_error("run_section: unhandled policy");
}

TuningResult tune_stad(const TuningWorkload& workload, const PolicyConfig& base, std::span<const RetryRange> ranges,
                       unsigned trials, std::uint64_t seed) {
    if (ranges.empty()) throw std::invalid_argument("tune_stad: no candidate ranges");
    if (trials == 0) throw std::invalid_argument("tune_stad: trials must be >= 1");
    TuningResult result;
    std::size_t best = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        if (ranges[i].lo < 1 || ranges[i].lo > ranges[i].hi) throw std::invalid_argument("tune_stad: bad range");
        PolicyConfig cfg = base;
        cfg.kind = PolicyKind::RndHyTm;
        cfg.retries = ranges[i];
        double total = 0.0;
        for (unsigned t = 0; t < trials; ++t) {
            auto trial_seed = derive_seed({seed, t});
            cfg.rng_seed = trial_seed;
            auto start = std::chrono::steady_clock::now();
            workload(cfg, trial_seed);
            total += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
        result.mean_seconds.push_back(total / trials);
        if (result.mean_seconds[i] < result.mean_seconds[best]) best = i;
    }
    result.best_range = ranges[best];
    result.tuned = TunedRetries{(ranges[best].lo + ranges[best].hi) / 2};
    return result;
}

}  // namespace hytm
