#include "hytm/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "hytm/rng.hpp"

namespace hytm {

KernelSelection parse_kernel_selection(std::string_view text) {
    if (text == "generate") return KernelSelection::Generate;
    if (text == "compute") return KernelSelection::Compute;
    if (text == "both") return KernelSelection::Both;
    throw std::invalid_argument("unknown kernel '" + std::string(text) + "' (expected generate, compute or both)");
}

void ExperimentSpec::validate() const {
    if (runs < 1) throw std::invalid_argument("ExperimentSpec: runs must be >= 1");
    if (threads < 1) throw std::invalid_argument("ExperimentSpec: threads must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: no seeds");
    if (scale < 1 || scale > kMaxScale) throw std::invalid_argument("ExperimentSpec: scale out of range");
    if (edgefactor < 1) throw std::invalid_argument("ExperimentSpec: edgefactor must be >= 1");
    htm.validate();
    if (retries) PolicyConfig{policy, *retries, htm, 0}.validate();
}

double ResultRow::counter(std::string_view name) const {
    for (std::size_t i = 0; i < kCounterCount; ++i) {
        if (kCounterNames[i] == name) return counters[i];
    }
    throw std::invalid_argument("unknown counter '" + std::string(name) + "'");
}

namespace {

struct RowContext {
    std::string policy;
    unsigned scale;
    unsigned edgefactor;
    unsigned threads;
    std::uint64_t seed;
    std::size_t r_cap;
    std::size_t w_cap;
    std::string retry_spec;
};

ResultRow base_row(const RowContext& c, std::string kernel) {
    ResultRow row;
    row.policy = c.policy;
    row.scale = c.scale;
    row.edgefactor = c.edgefactor;
    row.threads = c.threads;
    row.seed = c.seed;
    row.kernel = std::move(kernel);
    row.r_cap = c.r_cap;
    row.w_cap = c.w_cap;
    row.retry_spec = c.retry_spec;
    return row;
}

std::array<double, kCounterCount> as_doubles(const ThreadStats& s) {
    std::array<double, kCounterCount> out{};
    auto values = counter_values(s);
    for (std::size_t i = 0; i < kCounterCount; ++i) out[i] = static_cast<double>(values[i]);
    return out;
}

void append_run_rows(std::vector<ResultRow>& rows, const RowContext& c, const std::string& kernel, unsigned run,
                     const KernelStats& ks) {
    auto out = kernel_run_rows(base_row(c, kernel), run, ks);
    rows.insert(rows.end(), out.begin(), out.end());
}

ResultRow mean_row(const RowContext& c, const std::string& kernel, const std::vector<const ResultRow*>& aggregates) {
    auto row = base_row(c, kernel);
    for (const auto* a : aggregates) {
        row.duration_ns += a->duration_ns;
        for (std::size_t i = 0; i < kCounterCount; ++i) row.counters[i] += a->counters[i];
    }
    auto n = static_cast<double>(aggregates.size());
    row.duration_ns /= n;
    for (auto& v : row.counters) v /= n;
    return row;
}

std::string retry_label(PolicyKind kind, const RetrySpec& spec) {
    return uses_retries(kind) ? to_string(spec) : "none";
}

RetrySpec resolve_retries(const ExperimentSpec& spec, const std::vector<EdgeTuple>& tuning_edges,
                          const GraphLayout& layout) {
    if (spec.retries) return *spec.retries;
    if (spec.policy != PolicyKind::StAdHyTm) return default_retry_spec(spec.policy);
    PolicyConfig base{PolicyKind::RndHyTm, RetryRange{}, spec.htm, spec.seeds.front()};
    auto workload = [&](const PolicyConfig& cfg, std::uint64_t seed) {
        auto heap = make_graph_heap(layout, spec.heap_budget_words);
        SyncDomain domain(*heap);
        generation_kernel(tuning_edges, domain, layout, cfg, spec.threads, seed);
    };
    return tune_stad(workload, base, spec.tuning_ranges, spec.tuning_trials, spec.seeds.front()).tuned;
}

}  // namespace

std::vector<ResultRow> kernel_run_rows(const ResultRow& prototype, unsigned run, const KernelStats& stats) {
    if (stats.thread_ns.size() != stats.threads.size()) throw std::invalid_argument("kernel_run_rows: ragged stats");
    std::vector<ResultRow> rows;
    for (unsigned t = 0; t < stats.threads.size(); ++t) {
        auto row = prototype;
        row.thread_id = t;
        row.run = run;
        row.duration_ns = static_cast<double>(stats.thread_ns[t]);
        row.counters = as_doubles(stats.threads[t]);
        rows.push_back(std::move(row));
    }
    auto agg = prototype;
    agg.thread_id.reset();
    agg.run = run;
    agg.duration_ns = static_cast<double>(stats.wall_ns);
    agg.counters = as_doubles(stats.total());
    rows.push_back(std::move(agg));
    return rows;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    auto layout = GraphLayout::make(spec.scale, spec.edgefactor, spec.slot_capacity, spec.words_per_line);
    if (layout.total_words > spec.heap_budget_words) {
        throw std::length_error("scale " + std::to_string(spec.scale) + " needs " + std::to_string(layout.total_words) +
                                " heap words, budget is " + std::to_string(spec.heap_budget_words));
    }

    auto edges_for = [&](std::uint64_t seed) {
        RmatParams params;
        params.scale = spec.scale;
        params.edgefactor = spec.edgefactor;
        params.seed = seed;
        return rmat_edges(params);
    };

    ExperimentResult result;
    result.retries = resolve_retries(spec, edges_for(spec.seeds.front()), layout);
    PolicyConfig cfg{spec.policy, result.retries, spec.htm, 0};
    cfg.validate();
    const PolicyConfig untimed_build{PolicyKind::CoarseLock, FixedRetries{}, spec.htm, 0};

    const bool want_generate = spec.kernels != KernelSelection::Compute;
    const bool want_compute = spec.kernels != KernelSelection::Generate;

    for (auto seed : spec.seeds) {
        const auto edges = edges_for(seed);
        RowContext ctx{std::string(to_string(spec.policy)), spec.scale, spec.edgefactor, spec.threads, seed,
                       spec.htm.read_capacity, spec.htm.write_capacity, retry_label(spec.policy, result.retries)};
        std::vector<ResultRow> seed_rows;
        for (unsigned run = 0; run < spec.runs; ++run) {
            auto heap = make_graph_heap(layout, spec.heap_budget_words);
            SyncDomain domain(*heap);
            cfg.rng_seed = derive_seed({seed, run});
            const auto stream = derive_seed({seed, spec.threads, run});
            if (want_generate) {
                auto ks = generation_kernel(edges, domain, layout, cfg, spec.threads, stream);
                append_run_rows(seed_rows, ctx, "generate", run, ks);
            } else {
                generation_kernel(edges, domain, layout, untimed_build, 1, stream);
            }
            if (want_compute) {
                SharedGraph graph(*heap, layout);
                auto outcome = computation_kernel(graph, domain, cfg, spec.threads, derive_seed({stream, 7}));
                append_run_rows(seed_rows, ctx, "compute", run, outcome.stats);
            }
        }
        for (const char* kernel : {"generate", "compute"}) {
            std::vector<const ResultRow*> aggregates;
            for (const auto& r : seed_rows) {
                if (r.kernel == kernel && !r.thread_id) aggregates.push_back(&r);
            }
            if (aggregates.empty()) continue;
            seed_rows.push_back(mean_row(ctx, kernel, aggregates));
        }
        result.rows.insert(result.rows.end(), seed_rows.begin(), seed_rows.end());
    }
    return result;
}

// -- CSV ---------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 8> kLeadingColumns = {"policy", "scale",  "edgefactor", "threads",
                                                             "thread_id", "seed", "run",        "kernel"};
constexpr std::array<std::string_view, 3> kTrailingColumns = {"r_cap", "w_cap", "retry_spec"};
constexpr std::size_t kColumnCount = kLeadingColumns.size() + 1 + kCounterCount + kTrailingColumns.size();

void put_number(std::ostream& out, double v) {
    if (std::floor(v) == v && std::abs(v) < 9.007199254740992e15) {
        out << static_cast<long long>(v);
        return;
    }
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, end - buf);
}

template <typename T>
T parse_number(std::string_view field, std::string_view column) {
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
        throw std::runtime_error("parse_csv: bad value '" + std::string(field) + "' in column " + std::string(column));
    }
    return value;
}

}  // namespace

std::string csv_header() {
    std::string header;
    for (auto c : kLeadingColumns) header.append(c).push_back(',');
    header += "duration_ns";
    for (auto c : kCounterNames) header.append(",").append(c);
    for (auto c : kTrailingColumns) header.append(",").append(c);
    return header;
}

void emit_csv(std::span<const ResultRow> rows, std::ostream& sink) {
    sink << csv_header() << '\n';
    for (const auto& r : rows) {
        sink << r.policy << ',' << r.scale << ',' << r.edgefactor << ',' << r.threads << ',';
        if (r.thread_id) {
            sink << *r.thread_id;
        } else {
            sink << "all";
        }
        sink << ',' << r.seed << ',';
        if (r.run) {
            sink << *r.run;
        } else {
            sink << "mean";
        }
        sink << ',' << r.kernel << ',';
        put_number(sink, r.duration_ns);
        for (auto v : r.counters) {
            sink << ',';
            put_number(sink, v);
        }
        sink << ',' << r.r_cap << ',' << r.w_cap << ',' << r.retry_spec << '\n';
    }
    sink.flush();
    if (!sink) throw std::runtime_error("emit_csv: write to sink failed");
}

std::vector<ResultRow> parse_csv(std::istream& source) {
    std::string line;
    if (!std::getline(source, line)) throw std::runtime_error("parse_csv: empty input");
    if (line != csv_header()) throw std::runtime_error("parse_csv: unexpected header '" + line + "'");
    std::vector<ResultRow> rows;
    std::size_t line_no = 1;
    while (std::getline(source, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        for (;;) {
            auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != kColumnCount) {
            throw std::runtime_error("parse_csv: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                                     " fields, expected " + std::to_string(kColumnCount));
        }
        ResultRow r;
        r.policy = f[0];
        r.scale = parse_number<unsigned>(f[1], "scale");
        r.edgefactor = parse_number<unsigned>(f[2], "edgefactor");
        r.threads = parse_number<unsigned>(f[3], "threads");
        if (f[4] != "all") r.thread_id = parse_number<unsigned>(f[4], "thread_id");
        r.seed = parse_number<std::uint64_t>(f[5], "seed");
        if (f[6] != "mean") r.run = parse_number<unsigned>(f[6], "run");
        r.kernel = f[7];
        r.duration_ns = parse_number<double>(f[8], "duration_ns");
        for (std::size_t i = 0; i < kCounterCount; ++i) r.counters[i] = parse_number<double>(f[9 + i], kCounterNames[i]);
        r.r_cap = parse_number<std::size_t>(f[9 + kCounterCount], "r_cap");
        r.w_cap = parse_number<std::size_t>(f[10 + kCounterCount], "w_cap");
        r.retry_spec = f[11 + kCounterCount];
        rows.push_back(std::move(r));
    }
    return rows;
}

// -- Audit -------------------------------------------------------------------

std::optional<double> kernel_sections(const ResultRow& row) {
    double factor;
    if (row.kernel == "generate") {
        factor = 1;
    } else if (row.kernel == "compute") {
        factor = 2;
    } else {
        return std::nullopt;
    }
    auto edges = std::size_t{row.edgefactor} << row.scale;
    if (!row.thread_id) return factor * static_cast<double>(edges);
    if (row.threads == 0 || *row.thread_id >= row.threads) return std::nullopt;
    auto [b, e] = partition(edges, row.threads, *row.thread_id);
    return factor * static_cast<double>(e - b);
}

namespace {

bool same(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

std::string describe(const ResultRow& r) {
    std::ostringstream s;
    s << r.policy << " threads=" << r.threads << " seed=" << r.seed << " run=" << (r.run ? std::to_string(*r.run) : "mean")
      << " thread=" << (r.thread_id ? std::to_string(*r.thread_id) : "all") << " kernel=" << r.kernel;
    return s.str();
}

void audit_row(const ResultRow& r, const SectionCount& expected, std::vector<std::string>& out) {
    auto c = [&](std::string_view name) { return r.counter(name); };
    auto fail = [&](const std::string& what) { out.push_back(describe(r) + ": " + what); };

    double aborts = c("aborts_conflict") + c("aborts_capacity") + c("aborts_lock") + c("aborts_explicit") +
                    c("aborts_spurious");
    if (!same(c("htm_begins"), c("htm_commits") + aborts)) fail("htm_begins != htm_commits + aborts");
    if (!same(c("stm_begins"), c("stm_commits") + c("stm_aborts"))) fail("stm_begins != stm_commits + stm_aborts");

    std::optional<PolicyKind> kind;
    try {
        kind = parse_policy(r.policy);
    } catch (const std::invalid_argument&) {
        fail("unknown policy");
    }
    auto sections = expected ? expected(r) : std::nullopt;
    double completed = c("htm_commits") + c("stm_commits") + c("lock_commits");
    if (sections && !same(completed, *sections)) {
        fail("completed sections " + std::to_string(completed) + " != expected " + std::to_string(*sections));
    }
    if (!kind) return;

    if (uses_hardware(*kind)) {
        if (sections && !same(c("htm_retries"), c("htm_begins") - *sections)) {
            fail("htm_retries != htm_begins - first attempts");
        }
    } else if (c("htm_begins") != 0 || c("htm_retries") != 0) {
        fail("hardware activity under a non-hardware policy");
    }
    switch (*kind) {
    case PolicyKind::CoarseLock:
        if (c("stm_begins") != 0 || c("fallback_episodes") != 0) fail("coarse lock left the lock path");
        break;
    case PolicyKind::StmOnly:
        if (c("lock_commits") != 0) fail("stm-only committed on the lock path");
        if (!same(c("fallback_episodes"), c("stm_commits"))) fail("stm-only episodes != stm commits");
        break;
    case PolicyKind::HtmAtomicLock:
    case PolicyKind::HtmSpinLock:
    case PolicyKind::Hle:
        if (c("stm_begins") != 0) fail("software transactions under an HTM+lock policy");
        if (!same(c("fallback_episodes"), c("lock_commits"))) fail("lock episodes != lock commits");
        if (*kind == PolicyKind::Hle && c("htm_retries") != 0) fail("HLE retried speculatively");
        break;
    case PolicyKind::RndHyTm:
    case PolicyKind::FxHyTm:
    case PolicyKind::StAdHyTm:
    case PolicyKind::DyAdHyTm:
        if (c("lock_commits") != 0) fail("hybrid policy committed on the lock path");
        if (!same(c("fallback_episodes"), c("stm_commits"))) fail("fallback episodes != stm commits");
        break;
    }
}

using GroupKey = std::tuple<std::string, unsigned, unsigned, unsigned, std::uint64_t, std::string, std::size_t,
                            std::size_t, std::string>;

GroupKey group_of(const ResultRow& r) {
    return {r.policy, r.scale, r.edgefactor, r.threads, r.seed, r.kernel, r.r_cap, r.w_cap, r.retry_spec};
}

}  // namespace

std::vector<std::string> audit_rows(std::span<const ResultRow> rows, const SectionCount& expected) {
    std::vector<std::string> out;
    for (const auto& r : rows) audit_row(r, expected, out);

    // Aggregates against their thread rows, means against their aggregates.
    std::map<std::pair<GroupKey, unsigned>, std::vector<const ResultRow*>> thread_rows;
    std::map<std::pair<GroupKey, unsigned>, const ResultRow*> aggregates;
    std::map<GroupKey, std::vector<const ResultRow*>> run_aggregates;
    std::map<GroupKey, const ResultRow*> means;
    for (const auto& r : rows) {
        auto key = group_of(r);
        if (r.run && r.thread_id) {
            thread_rows[{key, *r.run}].push_back(&r);
        } else if (r.run) {
            aggregates[{key, *r.run}] = &r;
            run_aggregates[key].push_back(&r);
        } else {
            means[key] = &r;
        }
    }
    for (const auto& [key, agg] : aggregates) {
        auto it = thread_rows.find(key);
        if (it == thread_rows.end()) continue;
        if (it->second.size() != agg->threads) out.push_back(describe(*agg) + ": thread row count mismatch");
        for (std::size_t i = 0; i < kCounterCount; ++i) {
            double sum = 0;
            for (const auto* t : it->second) sum += t->counters[i];
            if (!same(sum, agg->counters[i])) {
                out.push_back(describe(*agg) + ": aggregate " + std::string(kCounterNames[i]) + " != sum of threads");
            }
        }
    }
    for (const auto& [key, mean] : means) {
        auto it = run_aggregates.find(key);
        if (it == run_aggregates.end()) {
            out.push_back(describe(*mean) + ": mean row without run rows");
            continue;
        }
        for (std::size_t i = 0; i < kCounterCount; ++i) {
            double sum = 0;
            for (const auto* a : it->second) sum += a->counters[i];
            if (!same(sum / static_cast<double>(it->second.size()), mean->counters[i])) {
                out.push_back(describe(*mean) + ": mean " + std::string(kCounterNames[i]) + " != mean of runs");
            }
        }
    }
    return out;
}

// -- Stress ------------------------------------------------------------------

StressReport run_stress(const StressSpec& spec) {
    if (spec.thread_counts.empty() || spec.seeds.empty() || spec.policies.empty()) {
        throw std::invalid_argument("run_stress: empty sweep");
    }
    if (spec.increments == 0) throw std::invalid_argument("run_stress: increments must be >= 1");
    spec.htm.validate();
    auto started = std::chrono::steady_clock::now();
    StressReport report;
    const std::size_t wpl = TmHeap::kDefaultWordsPerLine;
    const Addr counter_addr = SyncDomain::reserved_words(wpl);

    for (auto policy : spec.policies) {
        PolicyConfig cfg{policy, default_retry_spec(policy), spec.htm, 0};
        if (spec.retries) {
            PolicyConfig candidate = cfg;
            candidate.retries = *spec.retries;
            try {
                candidate.validate();
                cfg = candidate;
            } catch (const std::invalid_argument&) {
            }
        }
        cfg.validate();
        for (auto threads : spec.thread_counts) {
            if (threads == 0) throw std::invalid_argument("run_stress: zero threads");
            for (auto seed : spec.seeds) {
                ++report.runs;
                TmHeap heap(counter_addr + wpl, wpl);
                SyncDomain domain(heap);
                cfg.rng_seed = seed;
                auto ks = run_workers(threads, derive_seed({seed, threads, static_cast<std::uint64_t>(policy)}),
                                      [&](ThreadContext& ctx) {
                                          auto increment = [&](TxAccess& m) {
                                              m.write(counter_addr, m.read(counter_addr) + 1);
                                          };
                                          for (unsigned i = 0; i < spec.increments; ++i) {
                                              run_section(increment, domain, cfg, ctx);
                                          }
                                      });

                std::ostringstream where;
                where << to_string(policy) << " threads=" << threads << " seed=" << seed << ": ";
                const Word expected = Word{threads} * spec.increments;
                const Word actual = heap.raw_read(counter_addr);
                if (actual != expected) {
                    report.failures.push_back(where.str() + "counter " + std::to_string(actual) + " != " +
                                              std::to_string(expected));
                }
                if (heap.raw_read(kGlobalLockAddr) != 0 || heap.raw_read(domain.spinlock_addr()) != 0) {
                    report.failures.push_back(where.str() + "lock word left nonzero");
                }
                for (LineId line = 0; line < heap.line_count(); ++line) {
                    const auto& rec = heap.orec(line);
                    if (rec.writer() != kNoTx || rec.reader_count() != 0) {
                        report.failures.push_back(where.str() + "ownership record " + std::to_string(line) +
                                                  " not released");
                    }
                }
                RowContext ctx{std::string(to_string(policy)), 0, 0, threads, seed, spec.htm.read_capacity,
                               spec.htm.write_capacity, retry_label(policy, cfg.retries)};
                append_run_rows(report.rows, ctx, "stress", 0, ks);
            }
        }
    }
    const double per_thread = spec.increments;
    auto violations = audit_rows(report.rows, [per_thread](const ResultRow& r) -> std::optional<double> {
        return r.thread_id ? per_thread : per_thread * r.threads;
    });
    report.failures.insert(report.failures.end(), violations.begin(), violations.end());
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace hytm
