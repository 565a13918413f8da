// hytmlab: command-line driver for the hybrid TM laboratory.
//
//   hytmlab run --policy dyad --scale 14 --threads 8 --retries 10 --csv out.csv
//   hytmlab tune --ranges 1:20,20:50,50:100 --trials 3
//   hytmlab stress --threads 1,2,4,8 --increments 10000 --seeds 50
//   hytmlab dump-edges --scale 10 --out edges.txt

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hytm/harness.hpp"
#include "hytm/policies.hpp"
#include "hytm/workload.hpp"

namespace {

using namespace hytm;

const CLI::Range kPositive(1u, 1u << 30);

struct HtmFlags {
    std::size_t rcap = 512;
    std::size_t wcap = 64;
    double spurious = 0.0;

    void attach(CLI::App& app) {
        app.add_option("--rcap", rcap, "Read-set capacity in cachelines")->check(kPositive);
        app.add_option("--wcap", wcap, "Write-set capacity in cachelines")->check(kPositive);
        app.add_option("--spurious", spurious, "Probability that a hardware begin fails")->check(CLI::Range(0.0, 1.0));
    }

    HtmConfig config() const {
        HtmConfig htm;
        htm.read_capacity = rcap;
        htm.write_capacity = wcap;
        htm.spurious_abort_probability = spurious;
        return htm;
    }
};

std::vector<std::uint64_t> seed_list(std::uint64_t first, unsigned count) {
    std::vector<std::uint64_t> seeds(count);
    std::iota(seeds.begin(), seeds.end(), first);
    return seeds;
}

std::optional<RetrySpec> retry_flags(PolicyKind kind, const std::optional<unsigned>& retries,
                                     const std::optional<std::string>& range) {
    if (retries && range) throw std::invalid_argument("--retries and --retry-range are mutually exclusive");
    if (range) {
        auto parsed = parse_retry_range(*range);
        if (kind != PolicyKind::RndHyTm) throw std::invalid_argument("--retry-range applies to policy rnd only");
        return parsed;
    }
    if (retries) {
        if (!uses_retries(kind)) {
            throw std::invalid_argument("policy " + std::string(to_string(kind)) + " takes no retry budget");
        }
        if (kind == PolicyKind::RndHyTm) throw std::invalid_argument("policy rnd takes --retry-range LO:HI");
        if (kind == PolicyKind::StAdHyTm) return TunedRetries{*retries};
        return FixedRetries{*retries};
    }
    return std::nullopt;
}

void print_summary(const std::vector<ResultRow>& rows) {
    for (const auto& r : rows) {
        if (r.run || r.thread_id) continue;
        std::cout << std::left << std::setw(9) << r.kernel << " seed " << r.seed << ": mean "
                  << std::fixed << std::setprecision(3) << r.duration_ns / 1e6 << " ms"
                  << std::setprecision(1) << "  htm_commits " << r.counter("htm_commits") << "  htm_retries "
                  << r.counter("htm_retries") << "  stm_commits " << r.counter("stm_commits") << "  lock_commits "
                  << r.counter("lock_commits") << '\n';
    }
}

void write_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    try {
        emit_csv(rows, out);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

int report_audit(const std::vector<std::string>& violations) {
    for (const auto& v : violations) std::cerr << "invariant violated: " << v << '\n';
    return violations.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid transactional memory laboratory"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run the graph kernels under one policy and report statistics");
    std::string policy_name;
    std::optional<unsigned> retries;
    std::optional<std::string> retry_range;
    ExperimentSpec spec;
    std::uint64_t seed = 1;
    unsigned seed_count = 1;
    std::string kernel = "both";
    std::string csv_path;
    HtmFlags run_htm;
    run->add_option("--policy", policy_name, "lock, stm, htm-alock, htm-spin, hle, rnd, fx, stad, dyad")->required();
    run->add_option("--retries", retries, "Hardware retry budget (fixed or tuned policies)");
    run->add_option("--retry-range", retry_range, "Random retry range LO:HI (rnd)");
    run->add_option("--scale", spec.scale, "log2 of the vertex count")->check(CLI::Range(1u, kMaxScale));
    run->add_option("--edgefactor", spec.edgefactor, "Edges per vertex")->check(kPositive);
    run->add_option("--threads", spec.threads, "Worker threads")->check(kPositive);
    run->add_option("--seed", seed, "First seed");
    run->add_option("--seeds", seed_count, "Number of consecutive seeds")->check(kPositive);
    run->add_option("--runs", spec.runs, "Repetitions per seed")->check(kPositive);
    run->add_option("--kernel", kernel, "generate, compute or both");
    run->add_option("--csv", csv_path, "Write per-thread and aggregate rows to this file");
    run->add_option("--heap-budget", spec.heap_budget_words, "Maximum heap size in words");
    run_htm.attach(*run);

    // tune
    auto* tune = app.add_subcommand("tune", "Offline retry-range sweep for StAdHyTM");
    std::string ranges_text = "1:20,20:50,50:100";
    unsigned trials = 3;
    unsigned tune_scale = 10;
    unsigned tune_edgefactor = 8;
    unsigned tune_threads = 1;
    std::uint64_t tune_seed = 1;
    HtmFlags tune_htm;
    tune->add_option("--ranges", ranges_text, "Candidate ranges LO:HI,LO:HI,...");
    tune->add_option("--trials", trials, "Runs per range")->check(kPositive);
    tune->add_option("--scale", tune_scale)->check(CLI::Range(1u, kMaxScale));
    tune->add_option("--edgefactor", tune_edgefactor)->check(kPositive);
    tune->add_option("--threads", tune_threads)->check(kPositive);
    tune->add_option("--seed", tune_seed);
    tune_htm.attach(*tune);

    // stress
    auto* stress = app.add_subcommand("stress", "Shared-counter correctness suite across policies");
    std::vector<unsigned> stress_threads{1, 2, 4, 8};
    unsigned increments = 10000;
    unsigned stress_seeds = 50;
    std::vector<std::string> stress_policies;
    std::string stress_csv;
    HtmFlags stress_htm;
    stress->add_option("--threads", stress_threads, "Thread counts, e.g. 1,2,4,8")->delimiter(',');
    stress->add_option("--increments", increments, "Increments per thread")->check(kPositive);
    stress->add_option("--seeds", stress_seeds, "Number of seeds")->check(kPositive);
    stress->add_option("--policy", stress_policies, "Policies to check (default: all)")->delimiter(',');
    stress->add_option("--csv", stress_csv, "Write statistics rows to this file");
    stress_htm.attach(*stress);

    // dump-edges
    auto* dump = app.add_subcommand("dump-edges", "Write an R-MAT edge list as 'src dst weight' lines");
    RmatParams rmat;
    std::string out_path;
    dump->add_option("--scale", rmat.scale)->check(CLI::Range(1u, kMaxScale));
    dump->add_option("--edgefactor", rmat.edgefactor)->check(kPositive);
    dump->add_option("--seed", rmat.seed);
    dump->add_option("--a", rmat.a);
    dump->add_option("--b", rmat.b);
    dump->add_option("--c", rmat.c);
    dump->add_option("--d", rmat.d);
    dump->add_option("--max-weight", rmat.max_weight);
    dump->add_option("--out", out_path, "Output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            spec.policy = parse_policy(policy_name);
            spec.retries = retry_flags(spec.policy, retries, retry_range);
            spec.kernels = parse_kernel_selection(kernel);
            spec.htm = run_htm.config();
            spec.seeds = seed_list(seed, seed_count);
            auto result = run_experiment(spec);
            std::cout << "policy " << to_string(spec.policy) << "  retries "
                      << (uses_retries(spec.policy) ? to_string(result.retries) : "none") << "  scale "
                      << spec.scale << "  threads " << spec.threads << '\n';
            print_summary(result.rows);
            if (!csv_path.empty()) write_csv(csv_path, result.rows);
            return report_audit(audit_rows(result.rows));
        }
        if (tune->parsed()) {
            auto ranges = parse_retry_ranges(ranges_text);
            auto layout = GraphLayout::make(tune_scale, tune_edgefactor);
            RmatParams params;
            params.scale = tune_scale;
            params.edgefactor = tune_edgefactor;
            params.seed = tune_seed;
            auto edges = rmat_edges(params);
            auto workload = [&](const PolicyConfig& cfg, std::uint64_t s) {
                auto heap = make_graph_heap(layout, layout.total_words);
                SyncDomain domain(*heap);
                generation_kernel(edges, domain, layout, cfg, tune_threads, s);
            };
            PolicyConfig base{PolicyKind::RndHyTm, RetryRange{}, tune_htm.config(), tune_seed};
            auto result = tune_stad(workload, base, ranges, trials, tune_seed);
            for (std::size_t i = 0; i < ranges.size(); ++i) {
                std::cout << "range " << ranges[i].lo << ':' << ranges[i].hi << "  mean " << std::fixed
                          << std::setprecision(3) << result.mean_seconds[i] * 1e3 << " ms\n";
            }
            std::cout << "best range " << result.best_range.lo << ':' << result.best_range.hi << '\n';
            std::cout << "Tuned(" << result.tuned.n << ")\n";
            return 0;
        }
        if (stress->parsed()) {
            StressSpec s;
            if (!stress_policies.empty()) {
                s.policies.clear();
                for (const auto& name : stress_policies) s.policies.push_back(parse_policy(name));
            }
            s.thread_counts = stress_threads;
            s.increments = increments;
            s.seeds = seed_list(1, stress_seeds);
            s.htm = stress_htm.config();
            auto report = run_stress(s);
            if (!stress_csv.empty()) write_csv(stress_csv, report.rows);
            std::cout << report.runs << " runs, " << report.failures.size() << " failures, " << std::fixed
                      << std::setprecision(2) << report.seconds << " s\n";
            for (const auto& f : report.failures) std::cerr << "FAIL " << f << '\n';
            return report.failures.empty() ? 0 : 3;
        }
        if (dump->parsed()) {
            auto edges = rmat_edges(rmat);
            std::ofstream out(out_path);
            if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
            write_edge_list(out, edges);
            std::cout << edges.size() << " edges written to " << out_path << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "hytmlab: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
