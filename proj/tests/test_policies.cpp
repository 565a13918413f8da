#include <doctest.h>

#include <chrono>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>
#include <vector>

#include "hytm/policies.hpp"

using namespace hytm;

namespace {

constexpr std::size_t kWpl = TmHeap::kDefaultWordsPerLine;
constexpr Addr kData = 2 * kWpl;  // first line after the reserved lock lines

struct Fixture {
    TmHeap heap{64 * kWpl};
    SyncDomain domain{heap};
    ThreadContext ctx{0, 7};
    std::vector<SectionTrace> trace;

    Fixture() { ctx.trace = &trace; }

    PolicyConfig config(PolicyKind kind, RetrySpec retries, std::size_t wcap = 64) {
        PolicyConfig cfg{kind, retries, {}, 1};
        cfg.htm.write_capacity = wcap;
        return cfg;
    }
};

// Writes one word in each of `lines` distinct data lines.
auto wide_writer(std::size_t lines) {
    return [lines](TxAccess& tx) {
        for (std::size_t i = 0; i < lines; ++i) tx.write(kData + i * kWpl, tx.read(kData + i * kWpl) + 1);
    };
}

auto incrementer = [](TxAccess& tx) { tx.write(kData, tx.read(kData) + 1); };

}  // namespace

TEST_CASE("policy names round-trip") {
    std::set<std::string_view> names;
    for (auto kind : kAllPolicies) {
        CHECK(parse_policy(to_string(kind)) == kind);
        names.insert(to_string(kind));
    }
    CHECK(names.size() == kAllPolicies.size());
    CHECK_THROWS_AS(parse_policy("tl2"), std::invalid_argument);
    CHECK_THROWS_AS(parse_policy(""), std::invalid_argument);
    CHECK_THROWS_AS(parse_policy("DYAD"), std::invalid_argument);
}

TEST_CASE("policy traits") {
    CHECK_FALSE(uses_hardware(PolicyKind::CoarseLock));
    CHECK_FALSE(uses_hardware(PolicyKind::StmOnly));
    CHECK(uses_hardware(PolicyKind::Hle));
    CHECK_FALSE(uses_retries(PolicyKind::Hle));
    CHECK(uses_retries(PolicyKind::DyAdHyTm));
    CHECK(uses_retries(PolicyKind::HtmSpinLock));
}

TEST_CASE("retry spec text") {
    CHECK(to_string(RetrySpec{FixedRetries{10}}) == "fixed:10");
    CHECK(to_string(RetrySpec{RetryRange{1, 50}}) == "range:1:50");
    CHECK(to_string(RetrySpec{TunedRetries{35}}) == "tuned:35");

    CHECK(parse_retry_range("1:50") == RetryRange{1, 50});
    CHECK(parse_retry_range("7:7") == RetryRange{7, 7});
    for (auto bad : {"50:20", "0:5", "a:b", "5", "5:", ":5", "1:2:3", "-1:4", ""}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(parse_retry_range(bad), std::invalid_argument);
    }
    auto ranges = parse_retry_ranges("1:20,20:50,50:100");
    REQUIRE(ranges.size() == 3);
    CHECK(ranges[2] == RetryRange{50, 100});
    CHECK_THROWS_AS(parse_retry_ranges(""), std::invalid_argument);
    CHECK_THROWS_AS(parse_retry_ranges("1:20,"), std::invalid_argument);
}

TEST_CASE("default retry specs validate for their policy") {
    for (auto kind : kAllPolicies) {
        PolicyConfig cfg{kind, default_retry_spec(kind), {}, 0};
        CHECK_NOTHROW(cfg.validate());
    }
    CHECK(std::get<RetryRange>(default_retry_spec(PolicyKind::RndHyTm)) == RetryRange{1, 50});
}

TEST_CASE("config validation rejects mismatched retry specs") {
    CHECK_THROWS_AS((PolicyConfig{PolicyKind::DyAdHyTm, RetryRange{1, 5}, {}, 0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((PolicyConfig{PolicyKind::RndHyTm, FixedRetries{5}, {}, 0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((PolicyConfig{PolicyKind::StAdHyTm, FixedRetries{5}, {}, 0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((PolicyConfig{PolicyKind::RndHyTm, RetryRange{9, 3}, {}, 0}.validate()), std::invalid_argument);
    PolicyConfig bad_htm{PolicyKind::FxHyTm, FixedRetries{5}, {}, 0};
    bad_htm.htm.read_capacity = 0;
    CHECK_THROWS_AS(bad_htm.validate(), std::invalid_argument);
}

TEST_CASE("draw_tries") {
    std::mt19937_64 rng(3);
    CHECK(draw_tries(FixedRetries{4}, rng) == 4);
    CHECK(draw_tries(TunedRetries{35}, rng) == 35);
    CHECK(draw_tries(RetryRange{6, 6}, rng) == 6);

    // Uniform over [1, 5]: every value appears, counts near n/5.
    std::map<unsigned, int> counts;
    constexpr int kDraws = 50000;
    for (int i = 0; i < kDraws; ++i) {
        auto t = draw_tries(RetryRange{1, 5}, rng);
        REQUIRE(t >= 1);
        REQUIRE(t <= 5);
        ++counts[t];
    }
    double chi2 = 0;
    for (auto [v, c] : counts) chi2 += (c - kDraws / 5.0) * (c - kDraws / 5.0) / (kDraws / 5.0);
    CHECK(counts.size() == 5);
    CHECK(chi2 < 18.47);  // 4 dof, p = 0.001
}

TEST_CASE("sync domain needs the reserved lines") {
    TmHeap tiny(kWpl);
    CHECK_THROWS_AS(SyncDomain{tiny}, std::invalid_argument);
    TmHeap ok(SyncDomain::reserved_words(kWpl));
    SyncDomain d(ok);
    CHECK(d.counter().address() == 0);
    CHECK(d.spinlock_addr() == kWpl);
}

TEST_CASE_FIXTURE(Fixture, "an uncontended section commits on its first path") {
    struct Case {
        PolicyKind kind;
        Path path;
    };
    for (auto [kind, path] : {Case{PolicyKind::CoarseLock, Path::Lock}, Case{PolicyKind::StmOnly, Path::Software},
                              Case{PolicyKind::HtmAtomicLock, Path::Hardware}, Case{PolicyKind::HtmSpinLock, Path::Hardware},
                              Case{PolicyKind::Hle, Path::Hardware}, Case{PolicyKind::RndHyTm, Path::Hardware},
                              Case{PolicyKind::FxHyTm, Path::Hardware}, Case{PolicyKind::StAdHyTm, Path::Hardware},
                              Case{PolicyKind::DyAdHyTm, Path::Hardware}}) {
        CAPTURE(to_string(kind));
        auto before = heap.raw_read(kData);
        auto result = run_section(incrementer, domain, config(kind, default_retry_spec(kind)), ctx);
        CHECK(result.path == path);
        CHECK(result.retries_used == 0);
        CHECK(heap.raw_read(kData) == before + 1);
        CHECK(trace.back().path == path);
    }
    CHECK(heap.raw_read(0) == 0);
    CHECK(heap.raw_read(kWpl) == 0);
    CHECK(ctx.stats.completed_sections() == 9);
    CHECK(ctx.stats.htm_commits == 7);
    CHECK(ctx.stats.stm_commits == 1);
    CHECK(ctx.stats.lock_commits == 1);
    CHECK(ctx.stats.fallback_episodes == 1);
}

TEST_CASE_FIXTURE(Fixture, "fixed budget n gives n+1 hardware attempts before falling back") {
    for (unsigned n : {0u, 1u, 3u, 10u}) {
        CAPTURE(n);
        ctx.stats = {};
        auto result = run_section(wide_writer(5), domain, config(PolicyKind::FxHyTm, FixedRetries{n}, 4), ctx);
        CHECK(result.path == Path::Software);
        CHECK(result.retries_used == n);
        CHECK(trace.back().hw_attempts == n + 1);
        CHECK(ctx.stats.htm_begins == n + 1);
        CHECK(ctx.stats.aborts(AbortCause::Capacity) == n + 1);
        CHECK(ctx.stats.htm_retries == n);
        CHECK(ctx.stats.stm_commits == 1);
        CHECK(ctx.stats.fallback_episodes == 1);
    }
    CHECK(heap.raw_read(kData + 4 * kWpl) == 4);
    CHECK(heap.raw_read(0) == 0);
}

TEST_CASE_FIXTURE(Fixture, "random and tuned budgets follow their draw") {
    auto r = run_section(wide_writer(5), domain, config(PolicyKind::RndHyTm, RetryRange{5, 5}, 4), ctx);
    CHECK(r.retries_used == 5);
    auto t = run_section(wide_writer(5), domain, config(PolicyKind::StAdHyTm, TunedRetries{7}, 4), ctx);
    CHECK(t.retries_used == 7);
    CHECK(t.path == Path::Software);
}

TEST_CASE_FIXTURE(Fixture, "rnd draws once per section") {
    std::vector<unsigned> used;
    for (int i = 0; i < 200; ++i) {
        used.push_back(run_section(wide_writer(3), domain, config(PolicyKind::RndHyTm, RetryRange{2, 9}, 2), ctx)
                           .retries_used);
    }
    std::set<unsigned> distinct(used.begin(), used.end());
    CHECK(*distinct.begin() == 2);
    CHECK(*distinct.rbegin() == 9);
    CHECK(distinct.size() == 8);
}

TEST_CASE_FIXTURE(Fixture, "dyad: capacity abort leaves one final hardware attempt") {
    for (unsigned n : {1u, 10u, 100u}) {
        CAPTURE(n);
        ctx.stats = {};
        auto result = run_section(wide_writer(5), domain, config(PolicyKind::DyAdHyTm, FixedRetries{n}, 4), ctx);
        CHECK(result.path == Path::Software);
        CHECK(trace.back().hw_attempts == 2);
        CHECK(trace.back().hw_aborts == std::vector{AbortCause::Capacity, AbortCause::Capacity});
        CHECK(ctx.stats.htm_retries == 1);
        CHECK(ctx.stats.stm_commits == 1);
    }
}

TEST_CASE_FIXTURE(Fixture, "dyad with no budget left falls back after the capacity abort") {
    auto result = run_section(wide_writer(5), domain, config(PolicyKind::DyAdHyTm, FixedRetries{0}, 4), ctx);
    CHECK(result.path == Path::Software);
    CHECK(trace.back().hw_attempts == 1);
}

TEST_CASE_FIXTURE(Fixture, "dyad spends its full budget on non-capacity aborts") {
    auto cfg = config(PolicyKind::DyAdHyTm, FixedRetries{6});
    cfg.htm.spurious_abort_probability = 1.0;
    auto result = run_section(incrementer, domain, cfg, ctx);
    CHECK(result.path == Path::Software);
    CHECK(trace.back().hw_attempts == 7);
    CHECK(ctx.stats.aborts(AbortCause::Spurious) == 7);
}

TEST_CASE_FIXTURE(Fixture, "dyad: a capacity abort after other aborts still allows exactly one more attempt") {
    // Spurious aborts burn budget; the body only exceeds capacity from the third attempt on.
    int calls = 0;
    auto body = [&](TxAccess& tx) {
        ++calls;
        if (calls <= 2) throw TxAborted{};
        wide_writer(5)(tx);
    };
    auto result = run_section(body, domain, config(PolicyKind::DyAdHyTm, FixedRetries{10}, 4), ctx);
    CHECK(result.path == Path::Software);
    CHECK(trace.back().hw_aborts ==
          std::vector{AbortCause::Explicit, AbortCause::Explicit, AbortCause::Capacity, AbortCause::Capacity});
}

TEST_CASE_FIXTURE(Fixture, "htm with lock fallback takes the lock after n+1 attempts") {
    for (auto kind : {PolicyKind::HtmAtomicLock, PolicyKind::HtmSpinLock}) {
        CAPTURE(to_string(kind));
        ctx.stats = {};
        auto result = run_section(wide_writer(5), domain, config(kind, FixedRetries{2}, 4), ctx);
        CHECK(result.path == Path::Lock);
        CHECK(trace.back().hw_attempts == 3);
        CHECK(ctx.stats.lock_commits == 1);
        CHECK(ctx.stats.fallback_episodes == 1);
        CHECK(heap.raw_read(0) == 0);
        CHECK(heap.raw_read(kWpl) == 0);
    }
    CHECK(heap.raw_read(kData) == 2);
}

TEST_CASE_FIXTURE(Fixture, "hle makes one speculative attempt then locks") {
    auto result = run_section(wide_writer(5), domain, config(PolicyKind::Hle, FixedRetries{10}, 4), ctx);
    CHECK(result.path == Path::Lock);
    CHECK(trace.back().hw_attempts == 1);
    CHECK(ctx.stats.htm_retries == 0);
    CHECK(heap.raw_read(kWpl) == 0);
}

TEST_CASE_FIXTURE(Fixture, "a held counter aborts hybrid attempts by subscription") {
    heap.raw_write(0, 1);  // pretend another thread is in a software episode
    auto result = run_section(incrementer, domain, config(PolicyKind::FxHyTm, FixedRetries{2}), ctx);
    CHECK(result.path == Path::Software);
    CHECK(ctx.stats.aborts(AbortCause::LockSubscription) == 3);
    CHECK(heap.raw_read(0) == 1);
    CHECK(heap.raw_read(kData) == 1);
    heap.raw_write(0, 0);
}

TEST_CASE_FIXTURE(Fixture, "explicit aborts from the body are retried") {
    int calls = 0;
    auto body = [&](TxAccess& tx) {
        if (++calls == 1) throw TxAborted{};
        incrementer(tx);
    };
    auto result = run_section(body, domain, config(PolicyKind::FxHyTm, FixedRetries{3}), ctx);
    CHECK(result.path == Path::Hardware);
    CHECK(result.retries_used == 1);
    CHECK(ctx.stats.aborts(AbortCause::Explicit) == 1);
}

TEST_CASE_FIXTURE(Fixture, "software path retries until commit") {
    // A body that aborts its first software attempt.
    int calls = 0;
    auto body = [&](TxAccess& tx) {
        if (++calls == 1) throw TxAborted{};
        incrementer(tx);
    };
    run_section(body, domain, config(PolicyKind::StmOnly, FixedRetries{}), ctx);
    CHECK(ctx.stats.stm_begins == 2);
    CHECK(ctx.stats.stm_aborts == 1);
    CHECK(ctx.stats.stm_commits == 1);
    CHECK(ctx.stats.fallback_episodes == 1);
    CHECK(heap.raw_read(kData) == 1);
}

TEST_CASE_FIXTURE(Fixture, "other exceptions propagate and release locks") {
    auto boom = [](TxAccess&) { throw std::runtime_error("boom"); };
    for (auto kind : kAllPolicies) {
        CAPTURE(to_string(kind));
        CHECK_THROWS_AS(run_section(boom, domain, config(kind, default_retry_spec(kind)), ctx), std::runtime_error);
        CHECK(heap.raw_read(0) == 0);
        CHECK(heap.raw_read(kWpl) == 0);
        CHECK(GlobalLock::held_by_this_thread() == 0);
    }
}

TEST_CASE("concurrent increments under every policy") {
    constexpr unsigned kThreads = 4, kIncrements = 500;
    for (auto kind : kAllPolicies) {
        CAPTURE(to_string(kind));
        TmHeap heap(8 * kWpl);
        SyncDomain domain(heap);
        PolicyConfig cfg{kind, default_retry_spec(kind), {}, 1};
        std::vector<ThreadContext> ctxs;
        for (unsigned t = 0; t < kThreads; ++t) ctxs.emplace_back(t, 100 + t);
        std::vector<std::thread> workers;
        for (unsigned t = 0; t < kThreads; ++t) {
            workers.emplace_back([&, t] {
                for (unsigned i = 0; i < kIncrements; ++i) run_section(incrementer, domain, cfg, ctxs[t]);
            });
        }
        for (auto& w : workers) w.join();
        CHECK(heap.raw_read(kData) == kThreads * kIncrements);
        CHECK(heap.raw_read(0) == 0);
        ThreadStats total;
        for (auto& c : ctxs) total += c.stats;
        CHECK(total.completed_sections() == kThreads * kIncrements);
        CHECK(total.htm_begins == total.htm_commits + total.total_aborts());
    }
}

TEST_CASE("tune_stad picks the fastest range and its midpoint") {
    std::vector<RetryRange> ranges{{1, 20}, {20, 50}, {50, 100}};
    std::map<unsigned, std::set<std::uint64_t>> seeds_by_range;
    auto workload = [&](const PolicyConfig& cfg, std::uint64_t seed) {
        CHECK(cfg.kind == PolicyKind::RndHyTm);
        auto range = std::get<RetryRange>(cfg.retries);
        seeds_by_range[range.lo].insert(seed);
        // 20:50 is the cheap one.
        std::this_thread::sleep_for(std::chrono::milliseconds(range.lo == 20 ? 1 : 15));
    };
    PolicyConfig base{PolicyKind::StAdHyTm, TunedRetries{}, {}, 0};
    auto result = tune_stad(workload, base, ranges, 2, 9);
    CHECK(result.best_range == RetryRange{20, 50});
    CHECK(result.tuned.n == 35);
    CHECK(result.mean_seconds.size() == 3);
    // Paired trials: every range sees the same seeds.
    CHECK(seeds_by_range[1] == seeds_by_range[20]);
    CHECK(seeds_by_range[20] == seeds_by_range[50]);
    CHECK(seeds_by_range[1].size() == 2);
}

TEST_CASE("tune_stad argument errors") {
    auto noop = [](const PolicyConfig&, std::uint64_t) {};
    PolicyConfig base{};
    std::vector<RetryRange> none;
    std::vector<RetryRange> one{{1, 20}};
    std::vector<RetryRange> bad{{20, 1}};
    CHECK_THROWS_AS(tune_stad(noop, base, none, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(tune_stad(noop, base, one, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(tune_stad(noop, base, bad, 1, 0), std::invalid_argument);
    CHECK(tune_stad(noop, base, one, 1, 0).tuned.n == 10);
}
