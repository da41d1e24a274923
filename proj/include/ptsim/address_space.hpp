#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "ptsim/errors.hpp"
#include "ptsim/machine.hpp"
#include "ptsim/pte.hpp"
#include "ptsim/snapshot.hpp"
#include "ptsim/socket_mask.hpp"

namespace ptsim {

// Memory references made by one page-table operation. Propagating a write to a ring of R
// replicas costs R entry writes plus R reads of the ring links.
struct WriteLog {
    std::uint64_t pte_writes = 0;
    std::uint64_t ring_reads = 0;
    std::uint64_t walk_reads = 0;

    std::uint64_t memory_refs() const { return pte_writes + ring_reads + walk_reads; }

    WriteLog& operator+=(const WriteLog& o) {
        pte_writes += o.pte_writes;
        ring_reads += o.ring_reads;
        walk_reads += o.walk_reads;
        return *this;
    }
    friend bool operator==(const WriteLog&, const WriteLog&) = default;
};

struct Perms {
    bool writable = true;
};

struct AdBits {
    bool accessed = false;
    bool dirty = false;
    friend bool operator==(const AdBits&, const AdBits&) = default;
};

struct WalkStep {
    int level = 0;
    FrameNumber frame = 0;
    SocketId socket = 0;
};

struct WalkTrace {
    std::vector<WalkStep> steps;
    FrameNumber leaf_frame = 0; // exact 4 KiB data frame backing the address
    Pte leaf;
    PageSize page_size = PageSize::Size4K;
};

// A process address space backed by a 4-level radix page-table that may be replicated
// on several sockets.
//
// Every replica is a full tree. Corresponding nodes of all replicas form a ring through
// ring_next, in ascending socket order, so an update reaches every copy without walking
// the other trees. With a single-socket mask there is one tree, laid out by pt_policy;
// with two or more sockets each replica lives entirely on its own socket.
//
// Accessed/dirty bits belong to the hardware and are kept per replica. Software writes
// that keep an entry's target preserve each replica's bits; reads OR them across the ring.
//
// Concurrency: mutating operations take an exclusive lock, software_walk / snapshot /
// read_ad_bits take a shared lock. The hw_* accessors are for the simulated page walker
// and take no lock: walkers must run in the same event loop as the mutations.
class AddressSpace {
public:
    AddressSpace(Machine& machine, AllocPolicy pt_policy, AllocPolicy data_policy, SocketMask replication_mask,
                 PageSize page_size_mode = PageSize::Size4K)
        : machine_(machine), pt_policy_(pt_policy), data_policy_(data_policy), mode_(page_size_mode),
          id_(next_id()) {
        if (replication_mask.empty())
            throw std::invalid_argument("replication mask must not be empty");
        if (!replication_mask.subset_of(SocketMask::all(machine.socket_count())))
            throw std::invalid_argument("replication mask names a socket that does not exist");
        primary_ = replication_mask.first();
        const bool strict = replication_mask.size() > 1;
        for (SocketId s : replication_mask.sockets())
            replicas_.push_back({s, 0, strict});
        auto group = allocate_group(4, primary_);
        for (std::size_t i = 0; i < replicas_.size(); ++i)
            replicas_[i].root = group[i]->frame;
        rebuild_roots();
    }

    AddressSpace(const AddressSpace&) = delete;
    AddressSpace& operator=(const AddressSpace&) = delete;

    ~AddressSpace() {
        try {
            for_each_leaf_locked([&](std::uint64_t, Pte pte, PageSize size) {
                if (size == PageSize::Size2M)
                    machine_.free_huge(pte.frame());
                else
                    machine_.free_frame(pte.frame());
            });
            for (auto& [frame, node] : nodes_)
                machine_.free_frame(frame);
        } catch (...) {
        }
    }

    Machine& machine() const { return machine_; }
    std::uint64_t id() const { return id_; }
    // Bumped whenever cached translations may have become stale (unmap, protect, A/D clear,
    // replica changes). Translation engines flush on change.
    std::uint64_t epoch() const { return epoch_.load(std::memory_order_acquire); }

    SocketMask replication_mask() const {
        std::shared_lock lock(mutex_);
        return mask_locked();
    }
    SocketId primary_socket() const {
        std::shared_lock lock(mutex_);
        return primary_;
    }
    PageSize page_size_mode() const { return mode_; }
    const AllocPolicy& pt_policy() const { return pt_policy_; }
    const AllocPolicy& data_policy() const { return data_policy_; }

    void set_pt_policy(AllocPolicy policy) {
        std::unique_lock lock(mutex_);
        pt_policy_ = policy;
    }
    void set_data_policy(AllocPolicy policy) {
        std::unique_lock lock(mutex_);
        data_policy_ = policy;
    }

    // O(1): the root a core on socket should load at context switch.
    FrameNumber root_for_socket(SocketId socket) const { return roots_.at(socket); }
    const std::vector<FrameNumber>& roots() const { return roots_; }

    std::size_t pagetable_frames() const {
        std::shared_lock lock(mutex_);
        return nodes_.size();
    }
    std::size_t pagetable_frames_on(SocketId socket) const {
        std::shared_lock lock(mutex_);
        std::size_t n = 0;
        for (const auto& [frame, node] : nodes_)
            n += node->socket == socket;
        return n;
    }
    std::uint64_t data_frames() const { return data_frames_; }

    // Ring length of the node holding the translation for vaddr at level.
    std::size_t ring_length(std::uint64_t vaddr, int level) const {
        std::shared_lock lock(mutex_);
        const PageTableNode* n = table_at(vaddr, level);
        if (!n)
            throw NotMapped(vaddr);
        std::size_t len = 0;
        const PageTableNode* m = n;
        do {
            ++len;
            m = &node(m->ring_next);
        } while (m != n && len <= replicas_.size());
        return len;
    }

    // Writes value into slot index of every node in the ring containing node_handle.
    // Non-leaf values name any member of the child's ring; each replica gets a pointer to
    // the child on its own tree. The caller keeps the tree structurally consistent.
    WriteLog write_pte(FrameNumber node_handle, unsigned index, Pte value) {
        std::unique_lock lock(mutex_);
        if (index >= kEntriesPerTable)
            throw std::out_of_range("entry index out of range");
        auto it = nodes_.find(node_handle);
        if (it == nodes_.end())
            throw std::invalid_argument("frame does not hold a page-table node of this address space");
        PageTableNode& n = *it->second;
        if (value.present()) {
            if (value.huge() && n.level != 2)
                throw std::invalid_argument("huge entries are only valid at level 2");
            if (!value.huge() && n.level > 1) {
                auto child = nodes_.find(value.frame());
                if (child == nodes_.end() || child->second->level != n.level - 1)
                    throw std::invalid_argument("non-leaf entry must point at a node one level down");
            }
        }
        auto log = write_locked(n, index, value);
        bump_epoch();
        return log;
    }

    // Populates [vaddr, vaddr+size) like mmap with MAP_POPULATE. Missing tables are created
    // for every replica at once; data frames come from data_policy.
    WriteLog map(std::uint64_t vaddr, std::uint64_t size, Perms perms, SocketId touching_socket,
                 std::optional<PageSize> page_size = std::nullopt) {
        std::unique_lock lock(mutex_);
        const PageSize ps = page_size.value_or(mode_);
        const std::uint64_t step = page_bytes(ps);
        check_range(vaddr, size, step);
        if (touching_socket >= machine_.socket_count())
            throw std::out_of_range("touching socket does not exist");
        for (std::uint64_t va = vaddr; va < vaddr + size; va += step)
            if (!is_free(va, ps))
                throw AlreadyMapped(va);
        WriteLog log;
        std::uint64_t va = vaddr;
        try {
            for (; va < vaddr + size; va += step)
                map_one(va, ps, perms, touching_socket, log);
        } catch (const OutOfMemory&) {
            prune(va);
            for (std::uint64_t undo = vaddr; undo < va; undo += step) {
                WriteLog scratch;
                unmap_one(undo, scratch);
            }
            throw;
        }
        return log;
    }

    WriteLog unmap(std::uint64_t vaddr, std::uint64_t size) {
        std::unique_lock lock(mutex_);
        check_range(vaddr, size, kPageSize);
        check_mapped(vaddr, size);
        WriteLog log;
        for (std::uint64_t va = vaddr; va < vaddr + size;)
            va += unmap_one(va, log);
        bump_epoch();
        return log;
    }

    // Read-modify-write of every leaf in the range: one read on the primary tree, then the
    // update goes round the ring.
    WriteLog protect(std::uint64_t vaddr, std::uint64_t size, Perms perms) {
        std::unique_lock lock(mutex_);
        check_range(vaddr, size, kPageSize);
        check_mapped(vaddr, size);
        WriteLog log;
        for (std::uint64_t va = vaddr; va < vaddr + size;) {
            auto [n, level] = leaf_of(va);
            unsigned idx = table_index(va, level);
            ++log.walk_reads;
            Pte old = n->entries[idx];
            log += write_locked(*n, idx, old.with_writable(perms.writable));
            va += entry_span(level);
        }
        bump_epoch();
        return log;
    }

    // Moves data frames on from_socket to to_socket, rewriting the leaves in every replica.
    WriteLog migrate_data(std::uint64_t vaddr, std::uint64_t size, SocketId from_socket, SocketId to_socket) {
        std::unique_lock lock(mutex_);
        check_range(vaddr, size, kPageSize);
        WriteLog log;
        AllocPolicy target = AllocPolicy::fixed(to_socket);
        for (std::uint64_t va = vaddr; va < vaddr + size;) {
            auto [n, level] = leaf_of(va);
            if (!n) {
                va += kPageSize;
                continue;
            }
            unsigned idx = table_index(va, level);
            Pte old = n->entries[idx];
            if (machine_.socket_of(old.frame()) == from_socket && from_socket != to_socket) {
                if (old.huge()) {
                    Frame f = machine_.allocate_huge(target, to_socket);
                    log += write_locked(*n, idx, old.with_frame(f.number).without_ad());
                    machine_.free_huge(old.frame());
                } else {
                    Frame f = machine_.allocate_on(FrameKind::Data, to_socket);
                    log += write_locked(*n, idx, old.with_frame(f.number).without_ad());
                    machine_.free_frame(old.frame());
                }
            }
            va = (va & ~(entry_span(level) - 1)) + entry_span(level);
        }
        bump_epoch();
        return log;
    }

    AdBits read_ad_bits(std::uint64_t vaddr) const {
        std::shared_lock lock(mutex_);
        auto [n, level] = leaf_of(vaddr);
        if (!n)
            throw NotMapped(vaddr);
        return or_ad(*n, table_index(vaddr, level));
    }

    // OR over the ring of the entry used at level while translating vaddr.
    AdBits read_ad_bits_at(std::uint64_t vaddr, int level) const {
        std::shared_lock lock(mutex_);
        const PageTableNode* n = table_at(vaddr, level);
        if (!n || !n->entries[table_index(vaddr, level)].present())
            throw NotMapped(vaddr);
        return or_ad(*n, table_index(vaddr, level));
    }

    WriteLog clear_ad_bits(std::uint64_t vaddr) {
        std::unique_lock lock(mutex_);
        auto [n, level] = leaf_of(vaddr);
        if (!n)
            throw NotMapped(vaddr);
        unsigned idx = table_index(vaddr, level);
        WriteLog log;
        PageTableNode* m = n;
        do {
            ++log.ring_reads;
            ++log.pte_writes;
            m->entries[idx] = m->entries[idx].without_ad();
            m = &node(m->ring_next);
        } while (m != n);
        bump_epoch();
        return log;
    }

    // Replicates or collapses the page-table to exactly new_mask. Replicas are built by a
    // full walk of an existing tree with strict per-socket allocation. If an allocation
    // fails nothing changes.
    void set_replication_mask(SocketMask new_mask) {
        std::unique_lock lock(mutex_);
        set_mask_locked(new_mask);
    }

    // Replicate onto to_socket, then optionally drop the copy on from_socket.
    void migrate_pagetable(SocketId from_socket, SocketId to_socket, bool eager_free) {
        std::unique_lock lock(mutex_);
        SocketMask mask = mask_locked();
        if (!mask.contains(from_socket))
            throw std::invalid_argument("source socket holds no replica");
        if (to_socket >= machine_.socket_count())
            throw std::out_of_range("target socket does not exist");
        if (from_socket == to_socket)
            return;
        SocketMask grown = mask | SocketMask::single(to_socket);
        set_mask_locked(grown);
        if (eager_free)
            set_mask_locked(SocketMask(grown).reset(from_socket));
    }

    // Moves the whole (unreplicated) table onto socket and pins it there.
    void consolidate_on(SocketId socket) {
        std::unique_lock lock(mutex_);
        if (socket >= machine_.socket_count())
            throw std::out_of_range("socket does not exist");
        if (replicas_.size() == 1 && tree_on_socket(replicas_[0].root, socket)) {
            relabel(replicas_[0], socket);
            replicas_[0].strict = true;
        } else {
            std::vector<FrameNumber> created;
            Replica copy{socket, 0, true};
            try {
                copy.root = copy_tree(node(replica_for(primary_).root), socket, created);
            } catch (...) {
                for (FrameNumber f : created)
                    release_node(f);
                throw;
            }
            for (auto& r : replicas_)
                free_tree(r.root);
            replicas_ = {copy};
        }
        primary_ = socket;
        relink_all();
        rebuild_roots();
        bump_epoch();
    }

    // Deterministic walk from the observer's root. Throws PageFault(level) at the first
    // non-present entry.
    WalkTrace software_walk(SocketId observer_socket, std::uint64_t vaddr) const {
        std::shared_lock lock(mutex_);
        if (observer_socket >= machine_.socket_count())
            throw std::out_of_range("observer socket does not exist");
        WalkTrace trace;
        FrameNumber frame = roots_[observer_socket];
        for (int level = kLevels; level >= 1; --level) {
            const PageTableNode& n = node(frame);
            trace.steps.push_back({level, frame, n.socket});
            Pte e = vaddr < kVirtualLimit ? n.entries[table_index(vaddr, level)] : Pte{};
            if (!e.present())
                throw PageFault(level, vaddr);
            if (level == 1 || e.huge()) {
                trace.leaf = e;
                trace.page_size = e.huge() ? PageSize::Size2M : PageSize::Size4K;
                trace.leaf_frame = e.huge() ? e.frame() + ((vaddr >> 12) & (kFramesPerHugePage - 1)) : e.frame();
                return trace;
            }
            frame = e.frame();
        }
        throw std::logic_error("walk fell off the table");
    }

    // Every node of every replica (replicas in socket order, each tree in pre-order).
    SnapshotDump snapshot() const {
        std::shared_lock lock(mutex_);
        SnapshotDump dump;
        dump.roots = roots_;
        for (const auto& r : replicas_)
            dump_tree(node(r.root), dump);
        return dump;
    }

    // Visits every mapped page of the primary tree in address order.
    void for_each_leaf(const std::function<void(std::uint64_t, Pte, PageSize)>& fn) const {
        std::shared_lock lock(mutex_);
        for_each_leaf_locked(fn);
    }

    // --- Page-walker side (no locking) ---

    PageTableNode& hw_node(FrameNumber frame) { return node(frame); }
    const PageTableNode& hw_node(FrameNumber frame) const { return node(frame); }

    // What the hardware walker does on a TLB fill from observer_socket: set accessed along
    // the walked replica's path, and dirty on the leaf for a write.
    void hw_mark_accessed(SocketId observer_socket, std::uint64_t vaddr, bool is_write) {
        FrameNumber frame = roots_.at(observer_socket);
        for (int level = kLevels; level >= 1; --level) {
            PageTableNode& n = node(frame);
            unsigned idx = table_index(vaddr, level);
            Pte e = n.entries[idx];
            if (!e.present())
                throw PageFault(level, vaddr);
            const bool leaf = level == 1 || e.huge();
            e = e.with_accessed(true);
            if (leaf && is_write)
                e = e.with_dirty(true);
            n.entries[idx] = e;
            if (leaf)
                return;
            frame = e.frame();
        }
    }

private:
    struct Replica {
        SocketId socket = 0;
        FrameNumber root = 0;
        bool strict = false;
    };

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    void bump_epoch() { epoch_.fetch_add(1, std::memory_order_acq_rel); }

    PageTableNode& node(FrameNumber frame) const {
        auto it = nodes_.find(frame);
        if (it == nodes_.end())
            throw std::logic_error("frame " + std::to_string(frame) + " is not a page-table node");
        return *it->second;
    }

    SocketMask mask_locked() const {
        SocketMask m;
        for (const auto& r : replicas_)
            m.set(r.socket);
        return m;
    }

    Replica& replica_for(SocketId socket) {
        for (auto& r : replicas_)
            if (r.socket == socket)
                return r;
        throw std::logic_error("no replica for socket " + std::to_string(socket));
    }
    const Replica& replica_for(SocketId socket) const {
        return const_cast<AddressSpace*>(this)->replica_for(socket);
    }

    void rebuild_roots() {
        roots_.assign(machine_.socket_count(), replica_for(primary_).root);
        for (const auto& r : replicas_)
            roots_[r.socket] = r.root;
    }

    void check_range(std::uint64_t vaddr, std::uint64_t size, std::uint64_t align) const {
        if (size == 0)
            throw std::invalid_argument("empty range");
        if (vaddr % align != 0 || size % align != 0)
            throw std::invalid_argument("range is not aligned to the page size");
        if (vaddr >= kVirtualLimit || size > kVirtualLimit - vaddr)
            throw std::invalid_argument("range exceeds the 47-bit user address space");
    }

    // One node per replica for a new logical table, ring-linked.
    std::vector<PageTableNode*> allocate_group(int level, SocketId touching_socket) {
        std::vector<PageTableNode*> group;
        try {
            for (const auto& r : replicas_) {
                Frame f = r.strict ? machine_.allocate_on(FrameKind::PageTable, r.socket)
                                   : machine_.allocate_frame(FrameKind::PageTable, pt_policy_, touching_socket);
                auto n = std::make_unique<PageTableNode>();
                n->level = level;
                n->frame = f.number;
                n->socket = f.socket;
                n->replica = r.socket;
                group.push_back(n.get());
                nodes_.emplace(f.number, std::move(n));
            }
        } catch (...) {
            for (auto* n : group)
                release_node(n->frame);
            throw;
        }
        for (std::size_t i = 0; i < group.size(); ++i)
            group[i]->ring_next = group[(i + 1) % group.size()]->frame;
        return group;
    }

    void release_node(FrameNumber frame) {
        nodes_.erase(frame);
        machine_.free_frame(frame);
    }

    FrameNumber child_for_replica(FrameNumber child_handle, SocketId replica) const {
        const PageTableNode* start = &node(child_handle);
        const PageTableNode* m = start;
        do {
            if (m->replica == replica)
                return m->frame;
            m = &node(m->ring_next);
        } while (m != start);
        throw std::logic_error("child ring has no member for replica " + std::to_string(replica));
    }

    WriteLog write_locked(PageTableNode& any, unsigned idx, Pte value) {
        WriteLog log;
        const bool table_pointer = value.present() && !value.huge() && any.level > 1;
        PageTableNode* m = &any;
        do {
            ++log.ring_reads;
            ++log.pte_writes;
            Pte v = table_pointer ? value.with_frame(child_for_replica(value.frame(), m->replica)) : value;
            Pte old = m->entries[idx];
            if (old.present() && v.present() && old.frame() == v.frame())
                v = v.with_ad_bits(old.ad_bits());
            if (old.present() != v.present())
                v.present() ? ++m->present_count : --m->present_count;
            m->entries[idx] = v;
            m = &node(m->ring_next);
        } while (m != &any);
        return log;
    }

    static AdBits or_ad_impl(const AddressSpace& self, const PageTableNode& start, unsigned idx) {
        AdBits bits;
        const PageTableNode* m = &start;
        do {
            Pte e = m->entries[idx];
            bits.accessed |= e.accessed();
            bits.dirty |= e.dirty();
            m = &self.node(m->ring_next);
        } while (m != &start);
        return bits;
    }
    AdBits or_ad(const PageTableNode& start, unsigned idx) const { return or_ad_impl(*this, start, idx); }

    const PageTableNode& primary_root() const { return node(replica_for(primary_).root); }

    // Table at level on the primary tree's path to vaddr, or nullptr.
    PageTableNode* table_at(std::uint64_t vaddr, int level) const {
        PageTableNode* n = &node(replica_for(primary_).root);
        for (int l = kLevels; l > level; --l) {
            Pte e = n->entries[table_index(vaddr, l)];
            if (!e.present() || e.huge())
                return nullptr;
            n = &node(e.frame());
        }
        return n;
    }

    // Node and level holding the leaf entry for vaddr on the primary tree.
    std::pair<PageTableNode*, int> leaf_of(std::uint64_t vaddr) const {
        if (vaddr >= kVirtualLimit)
            return {nullptr, 0};
        PageTableNode* n = &node(replica_for(primary_).root);
        for (int level = kLevels; level >= 1; --level) {
            Pte e = n->entries[table_index(vaddr, level)];
            if (!e.present())
                return {nullptr, level};
            if (level == 1 || e.huge())
                return {n, level};
            n = &node(e.frame());
        }
        return {nullptr, 0};
    }

    bool is_free(std::uint64_t vaddr, PageSize ps) const {
        const int leaf_level = ps == PageSize::Size4K ? 1 : 2;
        const PageTableNode* n = &primary_root();
        for (int level = kLevels;; --level) {
            Pte e = n->entries[table_index(vaddr, level)];
            if (level == leaf_level || !e.present())
                return !e.present();
            if (e.huge())
                return false;
            n = &node(e.frame());
        }
    }

    void check_mapped(std::uint64_t vaddr, std::uint64_t size) const {
        for (std::uint64_t va = vaddr; va < vaddr + size;) {
            auto [n, level] = leaf_of(va);
            if (!n)
                throw NotMapped(va);
            const std::uint64_t span = entry_span(level);
            if (va % span != 0 || vaddr + size - va < span)
                throw std::invalid_argument("range splits a 2 MiB mapping");
            va += span;
        }
    }

    void map_one(std::uint64_t va, PageSize ps, Perms perms, SocketId touching, WriteLog& log) {
        const int leaf_level = ps == PageSize::Size4K ? 1 : 2;
        PageTableNode* n = &node(replica_for(primary_).root);
        for (int level = kLevels; level > leaf_level; --level) {
            unsigned idx = table_index(va, level);
            Pte e = n->entries[idx];
            if (!e.present()) {
                auto group = allocate_group(level - 1, touching);
                log += write_locked(*n, idx, Pte::table(group.front()->frame));
                e = n->entries[idx];
            }
            n = &node(e.frame());
        }
        Frame data = ps == PageSize::Size4K ? machine_.allocate_frame(FrameKind::Data, data_policy_, touching)
                                            : machine_.allocate_huge(data_policy_, touching);
        log += write_locked(*n, table_index(va, leaf_level),
                            Pte::leaf(data.number, perms.writable, ps == PageSize::Size2M));
        data_frames_ += ps == PageSize::Size4K ? 1 : kFramesPerHugePage;
    }

    // Returns the bytes covered by the removed leaf.
    std::uint64_t unmap_one(std::uint64_t va, WriteLog& log) {
        auto [n, level] = leaf_of(va);
        if (!n)
            throw NotMapped(va);
        unsigned idx = table_index(va, level);
        ++log.walk_reads;
        Pte old = n->entries[idx];
        log += write_locked(*n, idx, Pte{});
        if (old.huge()) {
            machine_.free_huge(old.frame());
            data_frames_ -= kFramesPerHugePage;
        } else {
            machine_.free_frame(old.frame());
            --data_frames_;
        }
        prune(va, &log);
        return entry_span(level);
    }

    // Frees tables on the path to va that no longer hold any entry.
    void prune(std::uint64_t va, WriteLog* log = nullptr) {
        std::vector<std::pair<PageTableNode*, unsigned>> path;
        PageTableNode* n = &node(replica_for(primary_).root);
        for (int level = kLevels; level >= 1; --level) {
            unsigned idx = table_index(va, level);
            path.emplace_back(n, idx);
            Pte e = n->entries[idx];
            if (!e.present() || e.huge() || level == 1)
                break;
            n = &node(e.frame());
        }
        for (std::size_t i = path.size(); i-- > 1;) {
            PageTableNode* t = path[i].first;
            if (t->present_count != 0)
                break;
            auto [parent, pidx] = path[i - 1];
            WriteLog w = write_locked(*parent, pidx, Pte{});
            if (log)
                *log += w;
            free_ring(*t);
        }
    }

    void free_ring(PageTableNode& any) {
        std::vector<FrameNumber> members;
        const PageTableNode* m = &any;
        do {
            members.push_back(m->frame);
            m = &node(m->ring_next);
        } while (m != &any);
        for (FrameNumber f : members)
            release_node(f);
    }

    void free_tree(FrameNumber root) {
        PageTableNode& n = node(root);
        if (n.level > 1)
            for (Pte e : n.entries)
                if (e.present() && !e.huge())
                    free_tree(e.frame());
        release_node(root);
    }

    bool tree_on_socket(FrameNumber root, SocketId socket) const {
        const PageTableNode& n = node(root);
        if (n.socket != socket)
            return false;
        if (n.level > 1)
            for (Pte e : n.entries)
                if (e.present() && !e.huge() && !tree_on_socket(e.frame(), socket))
                    return false;
        return true;
    }

    void relabel(Replica& r, SocketId socket) {
        std::function<void(FrameNumber)> visit = [&](FrameNumber f) {
            PageTableNode& n = node(f);
            n.replica = socket;
            if (n.level > 1)
                for (Pte e : n.entries)
                    if (e.present() && !e.huge())
                        visit(e.frame());
        };
        visit(r.root);
        r.socket = socket;
    }

    // Copies the tree under src onto socket. Leaves take the OR of the ring's A/D bits so no
    // hardware state is lost if the source replicas are freed later.
    FrameNumber copy_tree(const PageTableNode& src, SocketId socket, std::vector<FrameNumber>& created) {
        Frame f = machine_.allocate_on(FrameKind::PageTable, socket);
        auto owned = std::make_unique<PageTableNode>();
        PageTableNode* n = owned.get();
        n->level = src.level;
        n->frame = f.number;
        n->socket = socket;
        n->replica = socket;
        n->ring_next = f.number;
        nodes_.emplace(f.number, std::move(owned));
        created.push_back(f.number);
        for (unsigned i = 0; i < kEntriesPerTable; ++i) {
            Pte e = src.entries[i];
            if (!e.present())
                continue;
            AdBits ad = or_ad(src, i);
            Pte copy = e.without_ad().with_accessed(ad.accessed).with_dirty(ad.dirty);
            if (src.level > 1 && !e.huge())
                copy = copy.with_frame(copy_tree(node(e.frame()), socket, created));
            n->entries[i] = copy;
            ++n->present_count;
        }
        return f.number;
    }

    void set_mask_locked(SocketMask new_mask) {
        if (new_mask.empty())
            throw std::invalid_argument("replication mask must not be empty");
        if (!new_mask.subset_of(SocketMask::all(machine_.socket_count())))
            throw std::invalid_argument("replication mask names a socket that does not exist");
        const SocketMask current = mask_locked();
        auto existing = [&](SocketId s) -> Replica* {
            for (auto& r : replicas_)
                if (r.socket == s)
                    return &r;
            return nullptr;
        };

        std::vector<Replica> next;
        std::vector<SocketId> to_build;
        bool relabel_single = false;
        if (new_mask.size() == 1) {
            SocketId s = new_mask.first();
            if (Replica* r = existing(s))
                next.push_back(*r);
            else if (replicas_.size() == 1)
                relabel_single = true;
            else
                to_build.push_back(s);
        } else {
            for (SocketId s : new_mask.sockets()) {
                Replica* r = existing(s);
                if (r && (r->strict || tree_on_socket(r->root, s)))
                    next.push_back({s, r->root, true});
                else
                    to_build.push_back(s);
            }
        }
        if (new_mask == current && to_build.empty() && !relabel_single) {
            for (auto& r : replicas_)
                r.strict = r.strict || new_mask.size() > 1;
            return;
        }

        if (relabel_single) {
            relabel(replicas_[0], new_mask.first());
            replicas_[0].strict = false;
            primary_ = new_mask.first();
            rebuild_roots();
            bump_epoch();
            return;
        }

        std::vector<FrameNumber> created;
        try {
            const PageTableNode& source = node(replica_for(primary_).root);
            for (SocketId s : to_build)
                next.push_back({s, copy_tree(source, s, created), true});
        } catch (...) {
            for (FrameNumber f : created)
                release_node(f);
            throw;
        }

        for (const auto& r : replicas_) {
            bool kept = false;
            for (const auto& k : next)
                kept |= k.root == r.root;
            if (!kept)
                free_tree(r.root);
        }
        std::sort(next.begin(), next.end(), [](const Replica& a, const Replica& b) { return a.socket < b.socket; });
        replicas_ = std::move(next);
        if (!new_mask.contains(primary_))
            primary_ = new_mask.first();
        relink_all();
        rebuild_roots();
        bump_epoch();
    }

    // Rebuilds every ring by walking all replica trees in lockstep.
    void relink_all() {
        std::vector<PageTableNode*> group;
        for (const auto& r : replicas_)
            group.push_back(&node(r.root));
        relink(group);
    }

    void relink(const std::vector<PageTableNode*>& group) {
        for (std::size_t i = 0; i < group.size(); ++i)
            group[i]->ring_next = group[(i + 1) % group.size()]->frame;
        if (group.front()->level == 1)
            return;
        for (unsigned idx = 0; idx < kEntriesPerTable; ++idx) {
            Pte e = group.front()->entries[idx];
            if (!e.present() || e.huge())
                continue;
            std::vector<PageTableNode*> children;
            children.reserve(group.size());
            for (auto* g : group)
                children.push_back(&node(g->entries[idx].frame()));
            relink(children);
        }
    }

    void dump_tree(const PageTableNode& n, SnapshotDump& dump) const {
        DumpNode out;
        out.replica_socket = n.replica;
        out.level = n.level;
        out.frame = n.frame;
        out.socket = n.socket;
        for (unsigned i = 0; i < kEntriesPerTable; ++i) {
            Pte e = n.entries[i];
            if (!e.present())
                continue;
            out.entries.push_back({i, e.frame(), machine_.socket_of(e.frame()), true, e.writable(), e.huge(),
                                   e.accessed(), e.dirty()});
        }
        dump.nodes.push_back(std::move(out));
        if (n.level > 1)
            for (Pte e : n.entries)
                if (e.present() && !e.huge())
                    dump_tree(node(e.frame()), dump);
    }

    void for_each_leaf_locked(const std::function<void(std::uint64_t, Pte, PageSize)>& fn) const {
        std::function<void(const PageTableNode&, std::uint64_t)> visit = [&](const PageTableNode& n,
                                                                              std::uint64_t base) {
            for (unsigned i = 0; i < kEntriesPerTable; ++i) {
                Pte e = n.entries[i];
                if (!e.present())
                    continue;
                std::uint64_t va = base + i * entry_span(n.level);
                if (n.level == 1)
                    fn(va, e, PageSize::Size4K);
                else if (e.huge())
                    fn(va, e, PageSize::Size2M);
                else
                    visit(node(e.frame()), va);
            }
        };
        if (!replicas_.empty())
            visit(node(replica_for(primary_).root), 0);
    }

    Machine& machine_;
    AllocPolicy pt_policy_;
    AllocPolicy data_policy_;
    PageSize mode_;
    std::uint64_t id_;
    std::atomic<std::uint64_t> epoch_{0};
    mutable std::shared_mutex mutex_;

    std::vector<Replica> replicas_;
    SocketId primary_ = 0;
    std::vector<FrameNumber> roots_;
    std::unordered_map<FrameNumber, std::unique_ptr<PageTableNode>> nodes_;
    std::uint64_t data_frames_ = 0;
};

} // namespace ptsim
