#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hytm/policies.hpp"
#include "hytm/stats.hpp"
#include "hytm/workload.hpp"

namespace hytm {

enum class KernelSelection { Generate, Compute, Both };

KernelSelection parse_kernel_selection(std::string_view text);

struct ExperimentSpec {
    PolicyKind policy = PolicyKind::DyAdHyTm;
    // Unset means the policy default; StAdHyTm without a value is tuned first.
    std::optional<RetrySpec> retries;
    unsigned scale = 10;
    unsigned edgefactor = 8;
    unsigned threads = 1;
    HtmConfig htm{};
    std::vector<std::uint64_t> seeds{1};
    unsigned runs = 1;
    KernelSelection kernels = KernelSelection::Both;
    std::size_t slot_capacity = 0;  // 0: 4 x edgefactor
    std::size_t words_per_line = TmHeap::kDefaultWordsPerLine;
    std::size_t heap_budget_words = std::size_t{1} << 27;
    std::vector<RetryRange> tuning_ranges{{1, 20}, {20, 50}, {50, 100}};
    unsigned tuning_trials = 3;

    void validate() const;
};

// One CSV row. Thread rows carry a thread id; per-run aggregate rows carry
// none ("all"); per-seed mean rows additionally carry no run ("mean").
struct ResultRow {
    std::string policy;
    unsigned scale = 0;
    unsigned edgefactor = 0;
    unsigned threads = 0;
    std::optional<unsigned> thread_id;
    std::uint64_t seed = 0;
    std::optional<unsigned> run;
    std::string kernel;
    double duration_ns = 0;
    std::array<double, kCounterCount> counters{};
    std::size_t r_cap = 0;
    std::size_t w_cap = 0;
    std::string retry_spec;

    double counter(std::string_view name) const;
};

// Thread rows followed by the aggregate row for one kernel run. Identity
// columns (policy, sizes, seed, kernel, caps, retry spec) come from `prototype`.
std::vector<ResultRow> kernel_run_rows(const ResultRow& prototype, unsigned run, const KernelStats& stats);

struct ExperimentResult {
    RetrySpec retries;
    std::vector<ResultRow> rows;
};

// Runs runs x seeds repetitions of the selected kernels on fresh heaps.
// Throws std::length_error before any run if the graph exceeds the heap budget.
ExperimentResult run_experiment(const ExperimentSpec& spec);

std::string csv_header();
void emit_csv(std::span<const ResultRow> rows, std::ostream& sink);
std::vector<ResultRow> parse_csv(std::istream& source);

// Expected critical sections for a row, or nullopt if unknown. The default
// knows the generate and compute kernels.
using SectionCount = std::function<std::optional<double>(const ResultRow&)>;
std::optional<double> kernel_sections(const ResultRow& row);

// Checks every counter identity on every row, aggregate sums and means.
// Returns human-readable violations; empty means clean.
std::vector<std::string> audit_rows(std::span<const ResultRow> rows, const SectionCount& expected = kernel_sections);

struct StressSpec {
    std::vector<PolicyKind> policies{kAllPolicies.begin(), kAllPolicies.end()};
    std::vector<unsigned> thread_counts{1, 2, 4, 8};
    unsigned increments = 10000;
    std::vector<std::uint64_t> seeds{1};
    HtmConfig htm{};
    // Applied to policies that accept it; others use their default.
    std::optional<RetrySpec> retries;
};

struct StressReport {
    std::size_t runs = 0;
    std::vector<std::string> failures;
    std::vector<ResultRow> rows;
    double seconds = 0;
};

// Shared-counter increment suite: every (policy, threads, seed) run must end
// with counter == threads x increments, a zero global lock, clean ownership
// records and audit-clean statistics.
StressReport run_stress(const StressSpec& spec);

}  // namespace hytm
