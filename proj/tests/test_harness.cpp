#include <doctest.h>

#include <sstream>
#include <stdexcept>

#include "hytm/harness.hpp"

using namespace hytm;

namespace {

ExperimentSpec small_spec(PolicyKind policy) {
    ExperimentSpec s;
    s.policy = policy;
    s.scale = 6;
    s.edgefactor = 4;
    s.threads = 2;
    s.seeds = {1, 2};
    s.runs = 2;
    return s;
}

std::size_t count_if_rows(const std::vector<ResultRow>& rows, auto pred) {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), pred));
}

// Mutable copy of the index-th row matching pred.
ResultRow& find_row(std::vector<ResultRow>& rows, auto pred) {
    for (auto& r : rows) {
        if (pred(r)) return r;
    }
    throw std::logic_error("no such row");
}

std::size_t index_of(std::string_view name) {
    for (std::size_t i = 0; i < kCounterCount; ++i) {
        if (kCounterNames[i] == name) return i;
    }
    throw std::logic_error("no such counter");
}

}  // namespace

TEST_CASE("kernel selection names") {
    CHECK(parse_kernel_selection("generate") == KernelSelection::Generate);
    CHECK(parse_kernel_selection("compute") == KernelSelection::Compute);
    CHECK(parse_kernel_selection("both") == KernelSelection::Both);
    CHECK_THROWS_AS(parse_kernel_selection("all"), std::invalid_argument);
}

TEST_CASE("experiment spec validation") {
    auto s = small_spec(PolicyKind::DyAdHyTm);
    CHECK_NOTHROW(s.validate());
    auto bad = s;
    bad.threads = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.runs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.seeds.clear();
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.retries = RetryRange{1, 5};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.htm.write_capacity = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("experiment row structure") {
    auto s = small_spec(PolicyKind::FxHyTm);
    auto result = run_experiment(s);
    const auto& rows = result.rows;
    // Per seed: runs x (threads + 1) rows per kernel plus one mean per kernel.
    CHECK(rows.size() == 2 * (2 * (2 + 1) * 2 + 2));
    CHECK(count_if_rows(rows, [](const ResultRow& r) { return !r.run; }) == 4);
    CHECK(count_if_rows(rows, [](const ResultRow& r) { return r.run && !r.thread_id; }) == 8);
    for (const auto& r : rows) {
        CHECK(r.policy == "fx");
        CHECK(r.retry_spec == "fixed:10");
        CHECK(r.r_cap == 512);
        CHECK(r.w_cap == 64);
        CHECK(r.duration_ns > 0);
    }
    CHECK(audit_rows(rows).empty());
}

TEST_CASE("every policy produces audit-clean rows") {
    for (auto kind : kAllPolicies) {
        CAPTURE(to_string(kind));
        auto s = small_spec(kind);
        s.seeds = {3};
        s.tuning_trials = 1;
        auto result = run_experiment(s);
        auto violations = audit_rows(result.rows);
        for (const auto& v : violations) FAIL_CHECK(v);
        if (!uses_retries(kind)) CHECK(result.rows.front().retry_spec == "none");
    }
}

TEST_CASE("stad without a budget is tuned first") {
    auto s = small_spec(PolicyKind::StAdHyTm);
    s.seeds = {1};
    s.runs = 1;
    s.tuning_trials = 1;
    auto result = run_experiment(s);
    auto n = std::get<TunedRetries>(result.retries).n;
    CHECK((n == 10 || n == 35 || n == 75));
    CHECK(result.rows.front().retry_spec == "tuned:" + std::to_string(n));

    s.retries = TunedRetries{4};
    CHECK(std::get<TunedRetries>(run_experiment(s).retries).n == 4);
}

TEST_CASE("kernel selection limits the rows") {
    auto s = small_spec(PolicyKind::DyAdHyTm);
    s.seeds = {1};
    s.kernels = KernelSelection::Compute;
    auto rows = run_experiment(s).rows;
    CHECK(count_if_rows(rows, [](const ResultRow& r) { return r.kernel != "compute"; }) == 0);
    CHECK(audit_rows(rows).empty());
    s.kernels = KernelSelection::Generate;
    rows = run_experiment(s).rows;
    CHECK(count_if_rows(rows, [](const ResultRow& r) { return r.kernel != "generate"; }) == 0);
}

TEST_CASE("heap budget is enforced before running") {
    auto s = small_spec(PolicyKind::StAdHyTm);  // would otherwise start tuning
    s.heap_budget_words = 100;
    CHECK_THROWS_AS(run_experiment(s), std::length_error);
}

TEST_CASE("single-threaded counters are reproducible per seed") {
    for (auto kind : {PolicyKind::DyAdHyTm, PolicyKind::RndHyTm, PolicyKind::Hle}) {
        CAPTURE(to_string(kind));
        auto s = small_spec(kind);
        s.threads = 1;
        s.seeds = {5};
        s.runs = 1;
        s.htm.spurious_abort_probability = 0.3;
        s.htm.write_capacity = 1;
        auto a = run_experiment(s).rows;
        auto b = run_experiment(s).rows;
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].counters == b[i].counters);
        // The configuration actually produces aborts of both kinds.
        CHECK(a.back().counter("aborts_spurious") > 0);
        if (kind != PolicyKind::Hle) CHECK(a.front().counter("htm_retries") > 0);
    }
}

TEST_CASE("csv header lists the columns in order") {
    CHECK(csv_header() ==
          "policy,scale,edgefactor,threads,thread_id,seed,run,kernel,duration_ns,htm_begins,htm_commits,"
          "aborts_conflict,aborts_capacity,aborts_lock,aborts_explicit,aborts_spurious,htm_retries,stm_begins,"
          "stm_commits,stm_aborts,lock_commits,fallback_episodes,r_cap,w_cap,retry_spec");
}

TEST_CASE("csv round-trips") {
    auto rows = run_experiment(small_spec(PolicyKind::RndHyTm)).rows;
    // A mean over an odd split produces a fraction.
    rows.back().counters[0] = 2.5;
    rows.back().duration_ns = 1.0 / 3.0;
    std::stringstream first;
    emit_csv(rows, first);
    auto text = first.str();
    auto parsed = parse_csv(first);
    REQUIRE(parsed.size() == rows.size());
    CHECK(parsed.back().counters[0] == 2.5);
    CHECK(parsed.back().duration_ns == 1.0 / 3.0);
    CHECK(parsed.front().thread_id == rows.front().thread_id);
    CHECK_FALSE(parsed.back().run);
    std::stringstream second;
    emit_csv(parsed, second);
    CHECK(second.str() == text);
}

TEST_CASE("csv prints integral values without a fraction") {
    ResultRow r;
    r.policy = "lock";
    r.kernel = "generate";
    r.duration_ns = 1500;
    r.counters[index_of("lock_commits")] = 12;
    r.retry_spec = "none";
    std::ostringstream out;
    emit_csv(std::vector{r}, out);
    auto line = out.str().substr(out.str().find('\n') + 1);
    CHECK(line == "lock,0,0,0,all,0,mean,generate,1500,0,0,0,0,0,0,0,0,0,0,0,12,0,0,0,none\n");
}

TEST_CASE("csv parse errors") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return parse_csv(in);
    };
    CHECK_THROWS_AS(parse(""), std::runtime_error);
    CHECK_THROWS_AS(parse("policy,scale\n"), std::runtime_error);
    auto header = csv_header() + "\n";
    CHECK(parse(header).empty());
    CHECK_THROWS_AS(parse(header + "lock,1,2\n"), std::runtime_error);
    std::string good = "lock,6,4,2,0,1,0,generate,5,0,0,0,0,0,0,0,0,0,0,0,128,0,512,64,none\n";
    CHECK(parse(header + good).size() == 1);
    auto bad_number = good;
    bad_number.replace(bad_number.find(",6,"), 3, ",x,");
    CHECK_THROWS_AS(parse(header + bad_number), std::runtime_error);
}

TEST_CASE("csv sink failure is reported") {
    std::ostringstream sink;
    sink.setstate(std::ios::badbit);
    CHECK_THROWS_AS(emit_csv(std::vector<ResultRow>{}, sink), std::runtime_error);
}

TEST_CASE("audit catches tampering") {
    auto clean = run_experiment(small_spec(PolicyKind::DyAdHyTm)).rows;
    REQUIRE(audit_rows(clean).empty());
    auto thread_row = [](const ResultRow& r) { return r.thread_id.has_value(); };
    auto aggregate_row = [](const ResultRow& r) { return r.run && !r.thread_id; };
    auto mean = [](const ResultRow& r) { return !r.run; };

    SUBCASE("begins without matching outcome") {
        find_row(clean, thread_row).counters[index_of("htm_begins")] += 1;
    }
    SUBCASE("software begins without outcome") {
        find_row(clean, thread_row).counters[index_of("stm_begins")] += 1;
    }
    SUBCASE("lost section") {
        auto& r = find_row(clean, aggregate_row);
        r.counters[index_of("htm_commits")] -= 1;
        r.counters[index_of("htm_begins")] -= 1;
    }
    SUBCASE("aggregate disagrees with its threads") {
        find_row(clean, aggregate_row).counters[index_of("fallback_episodes")] += 1;
    }
    SUBCASE("mean disagrees with its runs") {
        find_row(clean, mean).counters[index_of("htm_retries")] += 0.5;
    }
    SUBCASE("retries inconsistent with begins") {
        find_row(clean, thread_row).counters[index_of("htm_retries")] += 1;
    }
    SUBCASE("lock commits under a hybrid policy") {
        auto& r = find_row(clean, thread_row);
        r.counters[index_of("lock_commits")] += 1;
        r.counters[index_of("htm_commits")] -= 1;
    }
    SUBCASE("unknown policy") {
        find_row(clean, thread_row).policy = "tl2";
    }
    CHECK_FALSE(audit_rows(clean).empty());
}

TEST_CASE("audit: hle must not retry") {
    auto rows = run_experiment(small_spec(PolicyKind::Hle)).rows;
    REQUIRE(audit_rows(rows).empty());
    // Shift one first attempt into a retry: identities still balance except the HLE rule.
    for (auto& r : rows) {
        if (r.thread_id && r.counter("htm_begins") > 0) {
            r.counters[index_of("htm_retries")] += 1;
            r.counters[index_of("htm_begins")] += 1;
            r.counters[index_of("aborts_conflict")] += 1;
            break;
        }
    }
    bool flagged = false;
    for (const auto& v : audit_rows(rows)) flagged |= v.find("HLE") != std::string::npos;
    CHECK(flagged);
}

TEST_CASE("stress suite") {
    StressSpec s;
    s.thread_counts = {1, 3};
    s.increments = 300;
    s.seeds = {1, 2};
    auto report = run_stress(s);
    CHECK(report.runs == kAllPolicies.size() * 2 * 2);
    for (const auto& f : report.failures) FAIL_CHECK(f);
    CHECK(report.rows.size() == kAllPolicies.size() * 2 * ((1 + 1) + (3 + 1)));  // thread rows + aggregate
    CHECK(report.seconds > 0);
}

TEST_CASE("stress retries override applies where it fits") {
    StressSpec s;
    s.policies = {PolicyKind::FxHyTm, PolicyKind::RndHyTm};
    s.thread_counts = {2};
    s.increments = 100;
    s.retries = FixedRetries{3};
    auto report = run_stress(s);
    CHECK(report.failures.empty());
    CHECK(report.rows.front().retry_spec == "fixed:3");
    CHECK(report.rows.back().retry_spec == "range:1:50");
}

TEST_CASE("stress argument errors") {
    StressSpec s;
    s.thread_counts.clear();
    CHECK_THROWS_AS(run_stress(s), std::invalid_argument);
    s = {};
    s.increments = 0;
    CHECK_THROWS_AS(run_stress(s), std::invalid_argument);
    s = {};
    s.thread_counts = {0};
    s.policies = {PolicyKind::CoarseLock};
    CHECK_THROWS_AS(run_stress(s), std::invalid_argument);
}

TEST_CASE("kernel_run_rows builds thread rows and an aggregate") {
    KernelStats ks;
    ks.threads.resize(2);
    ks.thread_ns = {10, 20};
    ks.wall_ns = 25;
    ks.threads[0].lock_commits = 3;
    ks.threads[1].lock_commits = 4;
    ResultRow proto;
    proto.policy = "lock";
    proto.kernel = "generate";
    proto.threads = 2;
    auto rows = kernel_run_rows(proto, 4, ks);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].thread_id == 0u);
    CHECK(rows[1].duration_ns == 20);
    CHECK(rows[2].thread_id == std::nullopt);
    CHECK(rows[2].run == 4u);
    CHECK(rows[2].counter("lock_commits") == 7);
    CHECK(rows[2].duration_ns == 25);
    ks.thread_ns.pop_back();
    CHECK_THROWS_AS(kernel_run_rows(proto, 0, ks), std::invalid_argument);
}
