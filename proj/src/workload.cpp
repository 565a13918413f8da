#include "hytm/workload.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <latch>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>

#include "hytm/rng.hpp"

namespace hytm {

namespace {
constexpr unsigned kVertexBits = 27;
constexpr unsigned kWeightBits = 10;
constexpr Word kVertexMask = (Word{1} << kVertexBits) - 1;
constexpr Word kWeightMask = (Word{1} << kWeightBits) - 1;

std::size_t round_up(std::size_t n, std::size_t multiple) { return (n + multiple - 1) / multiple * multiple; }
}  // namespace

Word pack_edge(const EdgeTuple& e) {
    return (Word{e.src} << (kVertexBits + kWeightBits)) | (Word{e.dst} << kWeightBits) | Word{e.weight};
}

EdgeTuple unpack_edge(Word w) {
    return {static_cast<std::uint32_t>((w >> (kVertexBits + kWeightBits)) & kVertexMask),
            static_cast<std::uint32_t>((w >> kWeightBits) & kVertexMask), static_cast<std::uint32_t>(w & kWeightMask)};
}

void RmatParams::validate() const {
    if (scale < 1 || scale > kMaxScale) {
        throw std::invalid_argument("RmatParams: scale must lie in [1, " + std::to_string(kMaxScale) + "]");
    }
    if (edgefactor < 1) throw std::invalid_argument("RmatParams: edgefactor must be >= 1");
    if (a < 0 || b < 0 || c < 0 || d < 0) throw std::invalid_argument("RmatParams: negative quadrant probability");
    if (std::abs(a + b + c + d - 1.0) > 1e-9) throw std::invalid_argument("RmatParams: a+b+c+d must equal 1");
    if (max_weight < 1 || max_weight > kMaxWeightLimit) {
        throw std::invalid_argument("RmatParams: max_weight must lie in [1, " + std::to_string(kMaxWeightLimit) + "]");
    }
}

std::vector<EdgeTuple> rmat_edges(const RmatParams& params) {
    params.validate();
    std::mt19937_64 rng(params.seed);
    const double ab = params.a + params.b;
    const double abc = ab + params.c;
    std::vector<EdgeTuple> edges;
    edges.reserve(params.edge_count());
    for (std::size_t i = 0; i < params.edge_count(); ++i) {
        std::uint32_t src = 0;
        std::uint32_t dst = 0;
        for (unsigned level = 0; level < params.scale; ++level) {
            const std::uint32_t bit = std::uint32_t{1} << (params.scale - 1 - level);
            const double u = unit_real(rng);
            if (u < params.a) continue;
            if (u < ab) {
                dst |= bit;
            } else if (u < abc) {
                src |= bit;
            } else {
                src |= bit;
                dst |= bit;
            }
        }
        auto weight = static_cast<std::uint32_t>(uniform_between(rng, 1, params.max_weight));
        edges.push_back({src, dst, weight});
    }
    return edges;
}

void write_edge_list(std::ostream& out, std::span<const EdgeTuple> edges) {
    for (const auto& e : edges) out << e.src << ' ' << e.dst << ' ' << e.weight << '\n';
    if (!out) throw std::runtime_error("write_edge_list: stream write failed");
}

std::vector<EdgeTuple> read_edge_list(std::istream& in) {
    std::vector<EdgeTuple> edges;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        EdgeTuple e;
        std::string extra;
        if (!(fields >> e.src >> e.dst >> e.weight) || (fields >> extra)) {
            throw std::runtime_error("read_edge_list: malformed line " + std::to_string(line_no) + ": '" + line + "'");
        }
        edges.push_back(e);
    }
    return edges;
}

GraphLayout GraphLayout::make(unsigned scale, unsigned edgefactor, std::size_t slot_capacity,
                              std::size_t words_per_line) {
    if (scale < 1 || scale > kMaxScale) throw std::invalid_argument("GraphLayout: scale out of range");
    if (edgefactor < 1) throw std::invalid_argument("GraphLayout: edgefactor must be >= 1");
    if (words_per_line < 1) throw std::invalid_argument("GraphLayout: words per line must be >= 1");
    GraphLayout l;
    l.words_per_line = words_per_line;
    l.vertex_count = std::size_t{1} << scale;
    l.edge_count = std::size_t{edgefactor} << scale;
    l.slot_capacity = slot_capacity == 0 ? 4 * std::size_t{edgefactor} : slot_capacity;
    l.block_words = round_up(1 + l.slot_capacity, words_per_line);
    l.vertex_base = SyncDomain::reserved_words(words_per_line);
    l.overflow_count = l.vertex_base + l.vertex_count * l.block_words;
    l.overflow_base = l.overflow_count + words_per_line;
    l.max_weight = round_up(l.overflow_base + l.edge_count, words_per_line);
    l.result_count = l.max_weight + words_per_line;
    l.result_base = l.result_count + words_per_line;
    l.total_words = round_up(l.result_base + l.edge_count, words_per_line);
    return l;
}

std::size_t SharedGraph::degree(std::size_t v) const {
    if (v >= layout_.vertex_count) throw std::out_of_range("SharedGraph: vertex out of range");
    return heap_->raw_read(layout_.degree_addr(v));
}

std::size_t SharedGraph::overflow_size() const { return heap_->raw_read(layout_.overflow_count); }

std::vector<EdgeTuple> SharedGraph::adjacency(std::size_t v) const {
    std::vector<EdgeTuple> out;
    auto deg = degree(v);
    auto in_slots = std::min(deg, layout_.slot_capacity);
    for (std::size_t i = 0; i < in_slots; ++i) out.push_back(unpack_edge(heap_->raw_read(layout_.slot_addr(v, i))));
    if (deg > in_slots) {
        auto n = overflow_size();
        for (std::size_t i = 0; i < n; ++i) {
            auto e = unpack_edge(heap_->raw_read(layout_.overflow_base + i));
            if (e.src == v) out.push_back(e);
        }
    }
    return out;
}

std::vector<Addr> SharedGraph::edge_addresses() const {
    std::vector<Addr> out;
    for (std::size_t v = 0; v < layout_.vertex_count; ++v) {
        auto in_slots = std::min(degree(v), layout_.slot_capacity);
        for (std::size_t i = 0; i < in_slots; ++i) out.push_back(layout_.slot_addr(v, i));
    }
    auto n = overflow_size();
    for (std::size_t i = 0; i < n; ++i) out.push_back(layout_.overflow_base + i);
    return out;
}

std::vector<EdgeTuple> SharedGraph::edges() const {
    std::vector<EdgeTuple> out;
    for (auto addr : edge_addresses()) out.push_back(unpack_edge(heap_->raw_read(addr)));
    return out;
}

ThreadStats KernelStats::total() const {
    ThreadStats sum;
    for (const auto& t : threads) sum += t;
    return sum;
}

KernelStats& KernelStats::operator+=(const KernelStats& other) {
    if (threads.empty()) {
        *this = other;
        return *this;
    }
    if (other.threads.size() != threads.size()) throw std::logic_error("KernelStats: thread count mismatch");
    for (std::size_t i = 0; i < threads.size(); ++i) {
        threads[i] += other.threads[i];
        thread_ns[i] += other.thread_ns[i];
    }
    wall_ns += other.wall_ns;
    return *this;
}

std::pair<std::size_t, std::size_t> partition(std::size_t count, unsigned n_threads, unsigned tid) {
    return {count * tid / n_threads, count * (tid + 1) / n_threads};
}

KernelStats run_workers(unsigned n_threads, std::uint64_t stream_seed, const std::function<void(ThreadContext&)>& work,
                        std::vector<std::vector<SectionTrace>>* traces) {
    if (n_threads == 0) throw std::invalid_argument("run_workers: need at least one thread");
    if (traces != nullptr) traces->resize(n_threads);
    KernelStats out;
    out.threads.resize(n_threads);
    out.thread_ns.resize(n_threads);
    std::vector<std::exception_ptr> errors(n_threads);
    std::latch start(n_threads + 1);
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (unsigned tid = 0; tid < n_threads; ++tid) {
        workers.emplace_back([&, tid] {
            ThreadContext ctx(tid, derive_seed({stream_seed, tid}));
            if (traces != nullptr) ctx.trace = &(*traces)[tid];
            start.arrive_and_wait();
            auto t0 = std::chrono::steady_clock::now();
            try {
                work(ctx);
            } catch (...) {
                errors[tid] = std::current_exception();
            }
            auto t1 = std::chrono::steady_clock::now();
            out.threads[tid] = ctx.stats;
            out.thread_ns[tid] = static_cast<std::uint64_t>(std::chrono::nanoseconds(t1 - t0).count());
        });
    }
    start.arrive_and_wait();
    auto t0 = std::chrono::steady_clock::now();
    for (auto& w : workers) w.join();
    out.wall_ns = static_cast<std::uint64_t>(std::chrono::nanoseconds(std::chrono::steady_clock::now() - t0).count());
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::unique_ptr<TmHeap> make_graph_heap(const GraphLayout& layout, std::size_t budget_words) {
    if (layout.total_words > budget_words) {
        throw std::length_error("graph needs " + std::to_string(layout.total_words) + " heap words, budget is " +
                                std::to_string(budget_words));
    }
    return std::make_unique<TmHeap>(layout.total_words, layout.words_per_line);
}

namespace {
void check_fits(const TmHeap& heap, const GraphLayout& layout) {
    if (heap.size() < layout.total_words || heap.words_per_line() != layout.words_per_line) {
        throw std::invalid_argument("graph layout does not match the heap");
    }
}
}  // namespace

KernelStats generation_kernel(std::span<const EdgeTuple> edges, SyncDomain& domain, const GraphLayout& layout,
                              const PolicyConfig& cfg, unsigned n_threads, std::uint64_t stream_seed,
                              std::vector<std::vector<SectionTrace>>* traces) {
    cfg.validate();
    check_fits(domain.heap(), layout);
    if (edges.size() > layout.edge_count) throw std::invalid_argument("generation_kernel: more edges than the layout holds");
    for (const auto& e : edges) {
        if (e.src >= layout.vertex_count || e.dst >= layout.vertex_count) {
            throw std::invalid_argument("generation_kernel: edge endpoint out of range");
        }
        if (e.weight > kMaxWeightLimit) throw std::invalid_argument("generation_kernel: edge weight exceeds 10 bits");
    }
    return run_workers(
        n_threads, stream_seed,
        [&](ThreadContext& ctx) {
            auto [begin, end] = partition(edges.size(), n_threads, ctx.thread_id);
            for (auto i = begin; i < end; ++i) {
                const auto& edge = edges[i];
                const Word packed = pack_edge(edge);
                auto insert = [&](TxAccess& m) {
                    auto deg = m.read(layout.degree_addr(edge.src));
                    if (deg < layout.slot_capacity) {
                        m.write(layout.slot_addr(edge.src, deg), packed);
                    } else {
                        auto n = m.read(layout.overflow_count);
                        m.write(layout.overflow_base + n, packed);
                        m.write(layout.overflow_count, n + 1);
                    }
                    m.write(layout.degree_addr(edge.src), deg + 1);
                };
                run_section(insert, domain, cfg, ctx);
            }
        },
        traces);
}

ComputeOutcome computation_kernel(const SharedGraph& graph, SyncDomain& domain, const PolicyConfig& cfg,
                                  unsigned n_threads, std::uint64_t stream_seed,
                                  std::vector<std::vector<SectionTrace>>* traces) {
    cfg.validate();
    const auto& layout = graph.layout();
    auto& heap = domain.heap();
    check_fits(heap, layout);
    const auto addresses = graph.edge_addresses();
    heap.raw_write(layout.max_weight, 0);
    heap.raw_write(layout.result_count, 0);

    ComputeOutcome outcome;
    outcome.stats = run_workers(
        n_threads, derive_seed({stream_seed, 1}),
        [&](ThreadContext& ctx) {
            auto [begin, end] = partition(addresses.size(), n_threads, ctx.thread_id);
            for (auto i = begin; i < end; ++i) {
                auto fold_max = [&](TxAccess& m) {
                    auto weight = unpack_edge(m.read(addresses[i])).weight;
                    if (weight > m.read(layout.max_weight)) m.write(layout.max_weight, weight);
                };
                run_section(fold_max, domain, cfg, ctx);
            }
        },
        traces);

    std::vector<std::vector<SectionTrace>> phase2_traces;
    outcome.stats += run_workers(
        n_threads, derive_seed({stream_seed, 2}),
        [&](ThreadContext& ctx) {
            auto [begin, end] = partition(addresses.size(), n_threads, ctx.thread_id);
            for (auto i = begin; i < end; ++i) {
                auto select = [&](TxAccess& m) {
                    auto packed = m.read(addresses[i]);
                    if (unpack_edge(packed).weight != m.read(layout.max_weight)) return;
                    auto n = m.read(layout.result_count);
                    m.write(layout.result_base + n, packed);
                    m.write(layout.result_count, n + 1);
                };
                run_section(select, domain, cfg, ctx);
            }
        },
        traces != nullptr ? &phase2_traces : nullptr);
    if (traces != nullptr) {
        for (std::size_t t = 0; t < phase2_traces.size(); ++t) {
            (*traces)[t].insert((*traces)[t].end(), phase2_traces[t].begin(), phase2_traces[t].end());
        }
    }

    outcome.max_weight = static_cast<std::uint32_t>(heap.raw_read(layout.max_weight));
    auto n = heap.raw_read(layout.result_count);
    outcome.selected.reserve(n);
    for (std::size_t i = 0; i < n; ++i) outcome.selected.push_back(unpack_edge(heap.raw_read(layout.result_base + i)));
    return outcome;
}

}  // namespace hytm
