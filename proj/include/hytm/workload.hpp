#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "hytm/policies.hpp"
#include "hytm/stats.hpp"
#include "hytm/tm_memory.hpp"

namespace hytm {

struct EdgeTuple {
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    std::uint32_t weight = 1;

    friend auto operator<=>(const EdgeTuple&, const EdgeTuple&) = default;
};

inline constexpr unsigned kMaxScale = 27;
inline constexpr unsigned kMaxWeightLimit = 1023;

// An edge packed into one heap word: 27 bits src, 27 bits dst, 10 bits weight.
Word pack_edge(const EdgeTuple& e);
EdgeTuple unpack_edge(Word w);

struct RmatParams {
    unsigned scale = 10;
    unsigned edgefactor = 8;
    double a = 0.57;
    double b = 0.19;
    double c = 0.19;
    double d = 0.05;
    unsigned max_weight = 255;
    std::uint64_t seed = 1;

    std::size_t vertex_count() const { return std::size_t{1} << scale; }
    std::size_t edge_count() const { return std::size_t{edgefactor} << scale; }
    void validate() const;
};

// Recursive-matrix edge generator: each endpoint pair comes from `scale`
// independent quadrant choices; weights are uniform in [1, max_weight].
// Deterministic given params.seed.
std::vector<EdgeTuple> rmat_edges(const RmatParams& params);

// Text edge list: one "src dst weight" line per edge.
void write_edge_list(std::ostream& out, std::span<const EdgeTuple> edges);
std::vector<EdgeTuple> read_edge_list(std::istream& in);

// Placement of the shared graph and the computation kernel's scratch inside a
// heap. Every region starts on its own cacheline.
//
//   [lock lines][vertex blocks: degree, slot 0..cap-1][overflow count]
//   [overflow entries][max weight][result count][result entries]
struct GraphLayout {
    std::size_t words_per_line = TmHeap::kDefaultWordsPerLine;
    std::size_t vertex_count = 0;
    std::size_t edge_count = 0;
    std::size_t slot_capacity = 0;
    std::size_t block_words = 0;
    Addr vertex_base = 0;
    Addr overflow_count = 0;
    Addr overflow_base = 0;
    Addr max_weight = 0;
    Addr result_count = 0;
    Addr result_base = 0;
    std::size_t total_words = 0;

    // slot_capacity 0 picks the default of 4 x edgefactor.
    static GraphLayout make(unsigned scale, unsigned edgefactor, std::size_t slot_capacity = 0,
                            std::size_t words_per_line = TmHeap::kDefaultWordsPerLine);

    Addr degree_addr(std::size_t v) const { return vertex_base + v * block_words; }
    Addr slot_addr(std::size_t v, std::size_t slot) const { return degree_addr(v) + 1 + slot; }
};

// Read-only view of a constructed graph. Accessors use raw reads, so the heap
// must be quiescent.
class SharedGraph {
public:
    SharedGraph(const TmHeap& heap, const GraphLayout& layout) : heap_(&heap), layout_(layout) {}

    const GraphLayout& layout() const { return layout_; }
    std::size_t degree(std::size_t v) const;
    std::size_t overflow_size() const;
    std::vector<EdgeTuple> adjacency(std::size_t v) const;
    std::vector<EdgeTuple> edges() const;
    // Heap addresses of every stored edge, vertex-major, overflow last.
    std::vector<Addr> edge_addresses() const;

private:
    const TmHeap* heap_;
    GraphLayout layout_;
};

struct KernelStats {
    std::vector<ThreadStats> threads;
    std::vector<std::uint64_t> thread_ns;
    std::uint64_t wall_ns = 0;

    ThreadStats total() const;
    KernelStats& operator+=(const KernelStats& other);
};

// Contiguous share [begin, end) of `count` items for worker `tid`.
std::pair<std::size_t, std::size_t> partition(std::size_t count, unsigned n_threads, unsigned tid);

// Spawns n_threads workers with independent contexts seeded from
// (stream_seed, tid) and joins them. When `traces` is set every worker
// records section traces into (*traces)[tid].
KernelStats run_workers(unsigned n_threads, std::uint64_t stream_seed,
                        const std::function<void(ThreadContext&)>& work,
                        std::vector<std::vector<SectionTrace>>* traces = nullptr);

// Fails with std::length_error if the layout exceeds `budget_words`.
std::unique_ptr<TmHeap> make_graph_heap(const GraphLayout& layout, std::size_t budget_words);

// Inserts every edge, one critical section per insertion, with edges split
// evenly by index among the workers.
KernelStats generation_kernel(std::span<const EdgeTuple> edges, SyncDomain& domain, const GraphLayout& layout,
                              const PolicyConfig& cfg, unsigned n_threads, std::uint64_t stream_seed,
                              std::vector<std::vector<SectionTrace>>* traces = nullptr);

struct ComputeOutcome {
    std::vector<EdgeTuple> selected;
    std::uint32_t max_weight = 0;
    KernelStats stats;
};

// Max-weight edge extraction over a constructed graph. Phase one folds every
// edge weight into a shared maximum; phase two appends each edge carrying
// that maximum to a shared result list. Each edge is one critical section in
// each phase.
ComputeOutcome computation_kernel(const SharedGraph& graph, SyncDomain& domain, const PolicyConfig& cfg,
                                  unsigned n_threads, std::uint64_t stream_seed,
                                  std::vector<std::vector<SectionTrace>>* traces = nullptr);

}  // namespace hytm
