#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ptsim {

// Fixed-capacity, fully-associative cache with least-recently-used replacement.
// Slots live in a flat array linked into a recency list by index.
template <typename Key, typename Value, typename Hash = std::hash<Key>>
class LruCache {
public:
    explicit LruCache(std::size_t capacity) : capacity_(capacity) {
        slots_.reserve(capacity);
        index_.reserve(capacity * 2);
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return index_.size(); }

    // Returns the cached value and marks it most recently used.
    Value* find(const Key& key) {
        auto it = index_.find(key);
        if (it == index_.end())
            return nullptr;
        touch(it->second);
        return &slots_[it->second].value;
    }

    const Value* peek(const Key& key) const {
        auto it = index_.find(key);
        return it == index_.end() ? nullptr : &slots_[it->second].value;
    }

    // Inserts or overwrites key as most recently used; returns the evicted pair, if any.
    std::optional<std::pair<Key, Value>> insert(const Key& key, Value value) {
        if (capacity_ == 0)
            return std::pair<Key, Value>{key, std::move(value)};
        if (auto it = index_.find(key); it != index_.end()) {
            slots_[it->second].value = std::move(value);
            touch(it->second);
            return std::nullopt;
        }
        std::optional<std::pair<Key, Value>> evicted;
        std::uint32_t slot;
        if (index_.size() < capacity_) {
            if (!free_.empty()) {
                slot = free_.back();
                free_.pop_back();
            } else {
                slot = static_cast<std::uint32_t>(slots_.size());
                slots_.push_back({});
            }
        } else {
            slot = tail_;
            unlink(slot);
            evicted.emplace(std::move(slots_[slot].key), std::move(slots_[slot].value));
            index_.erase(evicted->first);
        }
        slots_[slot].key = key;
        slots_[slot].value = std::move(value);
        push_front(slot);
        index_.emplace(key, slot);
        return evicted;
    }

    std::optional<Value> erase(const Key& key) {
        auto it = index_.find(key);
        if (it == index_.end())
            return std::nullopt;
        std::uint32_t slot = it->second;
        index_.erase(it);
        unlink(slot);
        free_.push_back(slot);
        return std::move(slots_[slot].value);
    }

    void clear() {
        slots_.clear();
        free_.clear();
        index_.clear();
        head_ = tail_ = kNil;
    }

    // Most-recently-used first.
    std::vector<Key> keys() const {
        std::vector<Key> out;
        for (std::uint32_t s = head_; s != kNil; s = slots_[s].next)
            out.push_back(slots_[s].key);
        return out;
    }

private:
    static constexpr std::uint32_t kNil = UINT32_MAX;

    struct Slot {
        Key key{};
        Value value{};
        std::uint32_t prev = kNil;
        std::uint32_t next = kNil;
    };

    void unlink(std::uint32_t s) {
        auto& slot = slots_[s];
        if (slot.prev != kNil)
            slots_[slot.prev].next = slot.next;
        else
            head_ = slot.next;
        if (slot.next != kNil)
            slots_[slot.next].prev = slot.prev;
        else
            tail_ = slot.prev;
        slot.prev = slot.next = kNil;
    }

    void push_front(std::uint32_t s) {
        slots_[s].prev = kNil;
        slots_[s].next = head_;
        if (head_ != kNil)
            slots_[head_].prev = s;
        head_ = s;
        if (tail_ == kNil)
            tail_ = s;
    }

    void touch(std::uint32_t s) {
        if (head_ == s)
            return;
        unlink(s);
        push_front(s);
    }

    std::size_t capacity_;
    std::vector<Slot> slots_;
    std::vector<std::uint32_t> free_;
    std::unordered_map<Key, std::uint32_t, Hash> index_;
    std::uint32_t head_ = kNil;
    std::uint32_t tail_ = kNil;
};

} // namespace ptsim
