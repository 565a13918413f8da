#include "hytm/stm.hpp"

#include <algorithm>
#include <stdexcept>

namespace hytm {

namespace {
thread_local int t_episodes_held = 0;
}

GlobalLock::GlobalLock(TmHeap& heap, Addr addr) : heap_(heap), addr_(addr) {
    heap_.line_of(addr_);  // bounds check
}

void GlobalLock::enter() {
    heap_.update(addr_, [](Word v) -> std::optional<Word> { return v + 1; });
    ++t_episodes_held;
}

void GlobalLock::exit() {
    if (t_episodes_held == 0) throw std::logic_error("GlobalLock::exit without a matching enter on this thread");
    heap_.update(addr_, [](Word v) -> std::optional<Word> {
        if (v == 0) throw std::logic_error("GlobalLock::exit would drive the counter below zero");
        return v - 1;
    });
    --t_episodes_held;
}

int GlobalLock::held_by_this_thread() { return t_episodes_held; }

SwTx::SwTx(TmHeap& heap, ThreadStats& stats)
    : heap_(heap), stats_(stats), id_(heap.next_tx_id()), start_stamp_(heap.clock().now()) {
    if (t_episodes_held == 0) throw std::logic_error("SwTx: the calling thread holds no fallback episode");
    ++stats_.stm_begins;
}

SwTx::~SwTx() {
    if (status_ == SwStatus::Active) abort();
}

bool SwTx::validate() const {
    for (const auto& entry : read_log_) {
        const auto& rec = heap_.orec(heap_.line_of(entry.addr));
        if (rec.version() != entry.version) return false;
        auto writer = rec.writer();
        if (writer != kNoTx && writer != id_) return false;
    }
    return true;
}

std::optional<Word> SwTx::read(Addr addr) {
    if (status_ != SwStatus::Active) throw std::logic_error("SwTx::read on a finished transaction");
    auto buffered = std::find_if(write_log_.begin(), write_log_.end(), [addr](const auto& e) { return e.first == addr; });
    if (buffered != write_log_.end()) return buffered->second;

    const auto& rec = heap_.orec(heap_.line_of(addr));
    auto before = rec.version();
    if (rec.writer() != kNoTx) {
        abort();
        return std::nullopt;
    }
    auto value = heap_.load(addr);
    if (rec.writer() != kNoTx || rec.version() != before) {
        abort();
        return std::nullopt;
    }
    read_log_.push_back({addr, before});

    if (rec.stamp() > start_stamp_) {
        auto now = heap_.clock().now();
        if (!validate()) {
            abort();
            return std::nullopt;
        }
        start_stamp_ = now;
    }
    return value;
}

void SwTx::write(Addr addr, Word value) {
    if (status_ != SwStatus::Active) throw std::logic_error("SwTx::write on a finished transaction");
    heap_.line_of(addr);  // bounds check
    auto buffered = std::find_if(write_log_.begin(), write_log_.end(), [addr](const auto& e) { return e.first == addr; });
    if (buffered != write_log_.end()) {
        buffered->second = value;
    } else {
        write_log_.emplace_back(addr, value);
    }
}

bool SwTx::commit() {
    if (status_ != SwStatus::Active) throw std::logic_error("SwTx::commit on a finished transaction");

    std::vector<LineId> lines;
    lines.reserve(write_log_.size());
    for (const auto& entry : write_log_) lines.push_back(heap_.line_of(entry.first));
    std::sort(lines.begin(), lines.end());
    lines.erase(std::unique(lines.begin(), lines.end()), lines.end());

    std::size_t claimed = 0;
    for (; claimed < lines.size(); ++claimed) {
        if (!heap_.try_claim(lines[claimed], id_)) break;
    }
    if (claimed < lines.size() || !validate()) {
        for (std::size_t i = 0; i < claimed; ++i) heap_.release(lines[i], id_);
        finish(SwStatus::Aborted);
        return false;
    }

    if (!lines.empty()) {
        auto stamp = heap_.clock().tick();
        for (const auto& [addr, value] : write_log_) heap_.store(addr, value);
        for (auto line : lines) heap_.publish(line, id_, stamp);
    }
    finish(SwStatus::Committed);
    return true;
}

void SwTx::abort() {
    if (status_ != SwStatus::Active) throw std::logic_error("SwTx::abort on a finished transaction");
    finish(SwStatus::Aborted);
}

void SwTx::finish(SwStatus status) {
    status_ = status;
    if (status == SwStatus::Committed) {
        ++stats_.stm_commits;
    } else {
        ++stats_.stm_aborts;
    }
    read_log_.clear();
    write_log_.clear();
}

}  // namespace hytm
