#include "hytm/htm_emu.hpp"

#include <algorithm>
#include <stdexcept>

#include "hytm/rng.hpp"

namespace hytm {

void HtmConfig::validate() const {
    if (read_capacity == 0 || write_capacity == 0) throw std::invalid_argument("HtmConfig: capacities must be >= 1");
    if (!(spurious_abort_probability >= 0.0 && spurious_abort_probability <= 1.0)) {
        throw std::invalid_argument("HtmConfig: spurious abort probability must lie in [0, 1]");
    }
}

HwTx::HwTx(TmHeap& heap, const HtmConfig& config, ThreadStats& stats, std::mt19937_64* rng)
    : heap_(heap), config_(config), stats_(stats), self_(heap.next_tx_id()) {
    ++stats_.htm_begins;
    if (config_.spurious_abort_probability > 0.0) {
        if (rng == nullptr) throw std::invalid_argument("HwTx: spurious aborts need a random source");
        if (unit_real(*rng) < config_.spurious_abort_probability) self_.doom(AbortCause::Spurious);
    }
}

HwTx::~HwTx() {
    if (active()) abort(AbortCause::Explicit);
}

HwStatus HwTx::status() const {
    switch (state_) {
    case State::Committed: return HwStatus::Committed;
    case State::Aborted: return HwStatus::Aborted;
    case State::Active: break;
    }
    return self_.doom_cause() ? HwStatus::Doomed : HwStatus::Active;
}

bool HwTx::fail_if_doomed() {
    if (auto cause = self_.doom_cause()) {
        finish_abort(*cause);
        return true;
    }
    return false;
}

bool HwTx::add_to_read_set(LineId line, bool lock_subscription) {
    if (std::find(read_lines_.begin(), read_lines_.end(), line) != read_lines_.end()) return true;
    if (read_lines_.size() >= config_.read_capacity) {
        finish_abort(AbortCause::Capacity);
        return false;
    }
    if (!heap_.subscribe(line, self_, lock_subscription)) {
        finish_abort(AbortCause::Conflict);
        return false;
    }
    read_lines_.push_back(line);
    return true;
}

bool HwTx::subscribe_lock(Addr lock_addr) {
    if (!active()) throw std::logic_error("HwTx::subscribe_lock on a finished transaction");
    if (fail_if_doomed()) return false;
    auto line = heap_.line_of(lock_addr);
    if (!add_to_read_set(line, true)) return false;
    if (heap_.load(lock_addr) != 0) {
        finish_abort(AbortCause::LockSubscription);
        return false;
    }
    return !fail_if_doomed();
}

std::optional<Word> HwTx::read(Addr addr) {
    if (!active()) throw std::logic_error("HwTx::read on a finished transaction");
    if (fail_if_doomed()) return std::nullopt;
    auto line = heap_.line_of(addr);
    auto buffered = std::find_if(write_buf_.begin(), write_buf_.end(), [addr](const auto& e) { return e.first == addr; });
    if (buffered != write_buf_.end()) return buffered->second;
    if (!add_to_read_set(line, false)) return std::nullopt;
    auto value = heap_.load(addr);
    // A claim racing with the load dooms us; never hand out such a value.
    if (fail_if_doomed()) return std::nullopt;
    return value;
}

bool HwTx::write(Addr addr, Word value) {
    if (!active()) throw std::logic_error("HwTx::write on a finished transaction");
    if (fail_if_doomed()) return false;
    auto line = heap_.line_of(addr);
    if (std::find(write_lines_.begin(), write_lines_.end(), line) == write_lines_.end()) {
        if (write_lines_.size() >= config_.write_capacity) {
            finish_abort(AbortCause::Capacity);
            return false;
        }
        if (!add_to_read_set(line, false)) return false;
        if (!heap_.try_claim(line, self_.id(), &self_)) {
            finish_abort(AbortCause::Conflict);
            return false;
        }
        write_lines_.push_back(line);
    }
    auto buffered = std::find_if(write_buf_.begin(), write_buf_.end(), [addr](const auto& e) { return e.first == addr; });
    if (buffered != write_buf_.end()) {
        buffered->second = value;
    } else {
        write_buf_.emplace_back(addr, value);
    }
    return true;
}

bool HwTx::commit() {
    if (!active()) throw std::logic_error("HwTx::commit on a finished transaction");
    if (!self_.seal()) {
        finish_abort(self_.doom_cause().value_or(AbortCause::Conflict));
        return false;
    }
    if (!write_lines_.empty()) {
        auto stamp = heap_.clock().tick();
        for (const auto& [addr, value] : write_buf_) heap_.store(addr, value);
        for (auto line : write_lines_) heap_.publish(line, self_.id(), stamp);
    }
    for (auto line : read_lines_) heap_.unsubscribe(line, self_);
    read_lines_.clear();
    write_lines_.clear();
    write_buf_.clear();
    state_ = State::Committed;
    ++stats_.htm_commits;
    return true;
}

void HwTx::abort(AbortCause cause) {
    if (!active()) throw std::logic_error("HwTx::abort on a finished transaction");
    finish_abort(self_.doom_cause().value_or(cause));
}

void HwTx::release_all() {
    for (auto line : write_lines_) heap_.release(line, self_.id());
    for (auto line : read_lines_) heap_.unsubscribe(line, self_);
    read_lines_.clear();
    write_lines_.clear();
    write_buf_.clear();
}

void HwTx::finish_abort(AbortCause cause) {
    release_all();
    state_ = State::Aborted;
    cause_ = cause;
    ++stats_.aborts(cause);
}

}  // namespace hytm
