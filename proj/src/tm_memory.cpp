#include "hytm/tm_memory.hpp"

#include <algorithm>
#include <mutex>
#include <stdexcept>
#include <string>

namespace hytm {

std::size_t OwnershipRecord::reader_count() const {
    std::lock_guard lock(guard_);
    return readers_.size();
}

bool OwnershipRecord::has_reader(TxId id) const {
    std::lock_guard lock(guard_);
    return std::any_of(readers_.begin(), readers_.end(), [id](const Reader& r) { return r.tx->id() == id; });
}

TmHeap::TmHeap(std::size_t n_words, std::size_t words_per_line)
    : words_per_line_(words_per_line),
      line_count_(words_per_line == 0 ? 0 : (n_words + words_per_line - 1) / words_per_line),
      words_(n_words),
      orecs_(line_count_) {
    if (n_words == 0) throw std::invalid_argument("TmHeap: word count must be positive");
    if (words_per_line == 0) throw std::invalid_argument("TmHeap: words per line must be positive");
}

void TmHeap::check(Addr addr) const {
    if (addr >= words_.size()) {
        throw std::out_of_range("TmHeap: address " + std::to_string(addr) + " outside heap of " +
                                std::to_string(words_.size()) + " words");
    }
}

LineId TmHeap::line_of(Addr addr) const {
    check(addr);
    return addr / words_per_line_;
}

Word TmHeap::raw_read(Addr addr) const {
    check(addr);
    return words_[addr].load(std::memory_order_relaxed);
}

void TmHeap::raw_write(Addr addr, Word value) {
    check(addr);
    words_[addr].store(value, std::memory_order_relaxed);
}

const OwnershipRecord& TmHeap::orec(LineId line) const {
    if (line >= line_count_) throw std::out_of_range("TmHeap: line " + std::to_string(line) + " out of range");
    return orecs_[line];
}

bool TmHeap::subscribe(LineId line, Subscriber& tx, bool lock_subscription) {
    auto& rec = orecs_[line];
    std::lock_guard lock(rec.guard_);
    auto owner = rec.writer_.load();
    if (owner != kNoTx && owner != tx.id()) return false;
    rec.readers_.push_back({&tx, lock_subscription});
    return true;
}

void TmHeap::unsubscribe(LineId line, const Subscriber& tx) {
    auto& rec = orecs_[line];
    std::lock_guard lock(rec.guard_);
    auto it = std::find_if(rec.readers_.begin(), rec.readers_.end(),
                           [&tx](const OwnershipRecord::Reader& r) { return r.tx == &tx; });
    if (it != rec.readers_.end()) {
        *it = rec.readers_.back();
        rec.readers_.pop_back();
    }
}

bool TmHeap::try_claim(LineId line, TxId owner, const Subscriber* self) {
    auto& rec = orecs_[line];
    std::lock_guard lock(rec.guard_);
    auto current = rec.writer_.load();
    if (current != kNoTx && current != owner) return false;
    rec.writer_.store(owner);
    for (auto& reader : rec.readers_) {
        if (reader.tx == self) continue;
        reader.tx->doom(reader.lock_subscription ? AbortCause::LockSubscription : AbortCause::Conflict);
    }
    return true;
}

void TmHeap::claim(LineId line, TxId owner) {
    Backoff backoff;
    while (!try_claim(line, owner)) backoff.pause();
}

void TmHeap::release(LineId line, TxId owner) {
    auto& rec = orecs_[line];
    auto expected = owner;
    rec.writer_.compare_exchange_strong(expected, kNoTx);
}

void TmHeap::publish(LineId line, TxId owner, std::uint64_t stamp) {
    auto& rec = orecs_[line];
    rec.stamp_.store(stamp);
    rec.version_.fetch_add(1);
    release(line, owner);
}

void TmHeap::wait_unowned(LineId line) const {
    Backoff backoff;
    while (orecs_[line].writer_.load() != kNoTx) backoff.pause();
}

Word TmHeap::update(Addr addr, const std::function<std::optional<Word>(Word)>& update) {
    auto line = line_of(addr);
    auto owner = next_tx_id();
    claim(line, owner);
    auto old = load(addr);
    std::optional<Word> next;
    try {
        next = update(old);
    } catch (...) {
        release(line, owner);
        throw;
    }
    if (next) {
        store(addr, *next);
        publish(line, owner, clock_.tick());
    } else {
        release(line, owner);
    }
    return old;
}

}  // namespace hytm
