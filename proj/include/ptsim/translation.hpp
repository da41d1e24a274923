#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "ptsim/address_space.hpp"
#include "ptsim/lru.hpp"
#include "ptsim/machine.hpp"

namespace ptsim {

struct TlbConfig {
    std::size_t l1_entries = 64;
    std::size_t l2_entries = 1024;

    void validate() const {
        if (l1_entries == 0 || l2_entries == 0 || l1_entries > l2_entries)
            throw ConfigError("TLB sizes must satisfy 0 < l1 <= l2");
    }
};

// Paging-structure (MMU) caches for the three upper levels; leaf entries are never cached.
struct PscConfig {
    bool enabled = true;
    std::size_t entries_per_level = 32;
};

// Optional stand-in for page-table lines held in a socket's last-level cache. Off when lines == 0.
struct PteCacheConfig {
    std::size_t lines = 0;
    Cycles hit_cycles = 100;
};

// Leaf page-table cachelines recently read on one socket; shared by that socket's cores.
class PteLineCache {
public:
    explicit PteLineCache(std::size_t lines) : cache_(lines) {}

    // True if the line was already cached; the line is cached afterwards either way.
    bool access(FrameNumber node_frame, unsigned index) {
        const std::uint64_t line = node_frame * (kEntriesPerTable / 8) + index / 8;
        if (cache_.find(line))
            return true;
        cache_.insert(line, 0);
        return false;
    }
    void clear() { cache_.clear(); }

private:
    LruCache<std::uint64_t, char> cache_;
};

struct WalkAccess {
    int level = 0;
    SocketId socket = 0;
    bool local = false;
    bool cached = false; // served by the PTE line cache
    Cycles cycles = 0;
};

struct WalkResult {
    Cycles cycles = 0;
    std::array<WalkAccess, kLevels> access_list{};
    std::uint8_t access_count = 0;
    SocketId leaf_socket = 0; // socket of the translated data frame
    std::optional<int> psc_hit_level;

    std::span<const WalkAccess> accesses() const { return {access_list.data(), access_count}; }
    const WalkAccess& leaf_access() const { return access_list[access_count - 1]; }
};

struct Translation {
    FrameNumber data_frame = 0;
    PageSize page_size = PageSize::Size4K;
    bool tlb_hit = false;
    WalkResult walk; // empty on a TLB hit
};

struct WalkStats {
    std::uint64_t walks = 0;
    Cycles walk_cycles = 0;
    std::uint64_t local_accesses = 0;
    std::uint64_t remote_accesses = 0;
    std::uint64_t leaf_local = 0;
    std::uint64_t leaf_remote = 0;
    std::uint64_t tlb_hits = 0;
    std::uint64_t tlb_misses = 0;

    double remote_fraction() const {
        const auto total = local_accesses + remote_accesses;
        return total == 0 ? 0.0 : static_cast<double>(remote_accesses) / static_cast<double>(total);
    }
    double remote_leaf_fraction() const {
        const auto total = leaf_local + leaf_remote;
        return total == 0 ? 0.0 : static_cast<double>(leaf_remote) / static_cast<double>(total);
    }

    WalkStats& operator+=(const WalkStats& o) {
        walks += o.walks;
        walk_cycles += o.walk_cycles;
        local_accesses += o.local_accesses;
        remote_accesses += o.remote_accesses;
        leaf_local += o.leaf_local;
        leaf_remote += o.leaf_remote;
        tlb_hits += o.tlb_hits;
        tlb_misses += o.tlb_misses;
        return *this;
    }
};

// Two-level, fully-associative LRU TLB. L2 holds L1 victims; a hit in L2 promotes back to L1.
class Tlb {
public:
    struct Entry {
        FrameNumber frame = 0; // first 4 KiB frame of the page
        PageSize size = PageSize::Size4K;
        bool dirty = false;
    };

    explicit Tlb(const TlbConfig& config) : l1_(config.l1_entries), l2_(config.l2_entries) { config.validate(); }

    // Looks up both page sizes.
    std::optional<Entry> lookup(std::uint64_t vaddr) {
        for (PageSize size : {PageSize::Size4K, PageSize::Size2M}) {
            const auto key = tag(vaddr, size);
            if (Entry* e = l1_.find(key))
                return *e;
            if (auto e = l2_.erase(key)) {
                fill(key, *e);
                return *e;
            }
        }
        return std::nullopt;
    }

    void insert(std::uint64_t vaddr, const Entry& entry) {
        const auto key = tag(vaddr, entry.size);
        l2_.erase(key);
        fill(key, entry);
    }

    void flush() {
        l1_.clear();
        l2_.clear();
    }

    std::size_t size() const { return l1_.size() + l2_.size(); }

private:
    static std::uint64_t tag(std::uint64_t vaddr, PageSize size) {
        return size == PageSize::Size4K ? (vaddr >> 12) << 1 : ((vaddr >> 21) << 1) | 1;
    }

    void fill(std::uint64_t key, const Entry& entry) {
        if (auto victim = l1_.insert(key, entry))
            l2_.insert(victim->first, victim->second);
    }

    LruCache<std::uint64_t, Entry> l1_;
    LruCache<std::uint64_t, Entry> l2_;
};

// Translation hardware of one core: TLB, paging-structure caches and the page walker.
// Cycles for each walk access are the machine's access cost scaled by the target socket's
// latency multiplier (interference).
class TranslationEngine {
public:
    TranslationEngine(const Machine& machine, SocketId core_socket, TlbConfig tlb = {}, PscConfig psc = {},
                      PteLineCache* pte_cache = nullptr, Cycles pte_cache_hit_cycles = 100)
        : machine_(machine), socket_(core_socket), tlb_(tlb), psc_config_(psc),
          psc_{LruCache<std::uint64_t, FrameNumber>(psc.entries_per_level),
               LruCache<std::uint64_t, FrameNumber>(psc.entries_per_level),
               LruCache<std::uint64_t, FrameNumber>(psc.entries_per_level)},
          pte_cache_(pte_cache), pte_cache_hit_cycles_(pte_cache_hit_cycles),
          multiplier_(machine.socket_count(), 1.0) {
        if (core_socket >= machine.socket_count())
            throw std::out_of_range("core socket does not exist");
    }

    SocketId socket() const { return socket_; }

    // Moving a thread to another socket reloads the root and starts with cold caches.
    void set_socket(SocketId socket) {
        if (socket >= machine_.socket_count())
            throw std::out_of_range("core socket does not exist");
        socket_ = socket;
        flush();
    }

    void set_pte_cache(PteLineCache* cache) { pte_cache_ = cache; }

    void set_latency_multipliers(std::vector<double> multipliers) {
        if (multipliers.size() != machine_.socket_count())
            throw std::invalid_argument("need one latency multiplier per socket");
        multiplier_ = std::move(multipliers);
    }
    double latency_multiplier(SocketId socket) const { return multiplier_.at(socket); }

    // Cost of one memory access from this core to frame, including interference.
    Cycles memory_cost(FrameNumber frame) const {
        const Cycles base = machine_.access_cost(socket_, frame);
        const double m = multiplier_[machine_.socket_of(frame)];
        return m == 1.0 ? base : static_cast<Cycles>(std::llround(static_cast<double>(base) * m));
    }

    Translation translate(AddressSpace& space, std::uint64_t vaddr, bool is_write) {
        sync(space);
        if (auto hit = tlb_.lookup(vaddr); hit && (!is_write || hit->dirty)) {
            ++stats_.tlb_hits;
            Translation t;
            t.tlb_hit = true;
            t.page_size = hit->size;
            t.data_frame = hit->frame + (hit->size == PageSize::Size2M ? (vaddr >> 12) & (kFramesPerHugePage - 1) : 0);
            return t;
        }
        // A write through a clean entry re-walks so the walker can set the dirty bit.
        ++stats_.tlb_misses;
        Translation t = walk(space, vaddr, is_write);
        const FrameNumber base = t.page_size == PageSize::Size2M
                                     ? t.data_frame - ((vaddr >> 12) & (kFramesPerHugePage - 1))
                                     : t.data_frame;
        tlb_.insert(vaddr, {base, t.page_size, is_write});
        return t;
    }

    void flush() {
        tlb_.flush();
        for (auto& c : psc_)
            c.clear();
    }

    const WalkStats& stats() const { return stats_; }
    void reset_stats() { stats_ = {}; }
    const Tlb& tlb() const { return tlb_; }

private:
    static constexpr std::uint64_t psc_key(std::uint64_t vaddr, int level) { return vaddr >> level_shift(level); }
    // psc_[0] caches level-4 entries, psc_[1] level-3, psc_[2] level-2.
    LruCache<std::uint64_t, FrameNumber>& psc_for(int level) { return psc_[kLevels - level]; }

    void sync(const AddressSpace& space) {
        if (space.id() != space_id_ || space.epoch() != epoch_) {
            flush();
            space_id_ = space.id();
            epoch_ = space.epoch();
        }
    }

    Translation walk(AddressSpace& space, std::uint64_t vaddr, bool is_write) {
        if (vaddr >= kVirtualLimit)
            throw PageFault(kLevels, vaddr);
        Translation t;
        WalkResult& w = t.walk;
        FrameNumber frame = space.root_for_socket(socket_);
        int level = kLevels;
        if (psc_config_.enabled) {
            for (int cached = 2; cached <= kLevels; ++cached) {
                if (FrameNumber* next = psc_for(cached).find(psc_key(vaddr, cached))) {
                    frame = *next;
                    level = cached - 1;
                    w.psc_hit_level = cached;
                    break;
                }
            }
        }
        for (;; --level) {
            PageTableNode& node = space.hw_node(frame);
            const unsigned idx = table_index(vaddr, level);
            Pte e = node.entries[idx];
            const bool leaf = e.present() && (level == 1 || e.huge());

            WalkAccess a;
            a.level = level;
            a.socket = node.socket;
            a.local = node.socket == socket_;
            if (leaf && pte_cache_ && pte_cache_->access(frame, idx)) {
                a.cached = true;
                a.cycles = pte_cache_hit_cycles_;
            } else {
                a.cycles = memory_cost(frame);
            }
            w.access_list[w.access_count++] = a;
            w.cycles += a.cycles;
            (a.local ? stats_.local_accesses : stats_.remote_accesses)++;

            if (!e.present()) {
                account(w);
                throw PageFault(level, vaddr);
            }
            e = e.with_accessed(true);
            if (leaf && is_write)
                e = e.with_dirty(true);
            node.entries[idx] = e;
            if (leaf) {
                (a.local ? stats_.leaf_local : stats_.leaf_remote)++;
                t.page_size = e.huge() ? PageSize::Size2M : PageSize::Size4K;
                t.data_frame = e.huge() ? e.frame() + ((vaddr >> 12) & (kFramesPerHugePage - 1)) : e.frame();
                w.leaf_socket = machine_.socket_of(t.data_frame);
                account(w);
                return t;
            }
            if (psc_config_.enabled)
                psc_for(level).insert(psc_key(vaddr, level), e.frame());
            frame = e.frame();
        }
    }

    void account(const WalkResult& w) {
        ++stats_.walks;
        stats_.walk_cycles += w.cycles;
    }

    const Machine& machine_;
    SocketId socket_;
    Tlb tlb_;
    PscConfig psc_config_;
    std::array<LruCache<std::uint64_t, FrameNumber>, 3> psc_;
    PteLineCache* pte_cache_;
    Cycles pte_cache_hit_cycles_;
    std::vector<double> multiplier_;
    WalkStats stats_;
    std::uint64_t space_id_ = 0;
    std::uint64_t epoch_ = 0;
};

} // namespace ptsim
