#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ptsim/errors.hpp"

namespace ptsim {

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kFramesPerHugePage = 512;

struct MachineConfig {
    SocketId socket_count = 4;
    std::uint64_t frames_per_socket = 262144; // 1 GiB of 4 KiB frames
    Cycles local_latency = 280;
    Cycles remote_latency = 580;
    // Bytes per cycle. Recorded for reporting; no contention model uses them.
    double local_bw = 12.7;
    double remote_bw = 5.0;
    std::uint64_t pagecache_reserve = 1024;

    void validate() const {
        if (socket_count < 1 || socket_count > 64)
            throw ConfigError("socket_count must be in [1, 64]");
        if (frames_per_socket < pagecache_reserve)
            throw ConfigError("frames_per_socket must be >= pagecache_reserve");
        if (frames_per_socket == 0)
            throw ConfigError("frames_per_socket must be positive");
        if (local_latency == 0 || remote_latency < local_latency)
            throw ConfigError("latencies must satisfy remote >= local > 0");
    }
};

enum class FrameKind : std::uint8_t { Free, Data, PageTable };

struct Frame {
    FrameNumber number = 0;
    SocketId socket = 0;
    FrameKind kind = FrameKind::Free;
};

// Socket selection for new frames. Interleave keeps its own round-robin cursor, so each
// owner of a policy object (one per address space and purpose) advances independently.
struct AllocPolicy {
    enum class Kind : std::uint8_t { FirstTouch, Interleave, Fixed };

    Kind kind = Kind::FirstTouch;
    SocketId fixed_socket = 0;
    SocketId next_interleave_socket = 0;

    static AllocPolicy first_touch() { return {}; }
    static AllocPolicy interleave() { return {Kind::Interleave, 0, 0}; }
    static AllocPolicy fixed(SocketId s) { return {Kind::Fixed, s, 0}; }

    std::string to_string() const {
        switch (kind) {
        case Kind::FirstTouch: return "first-touch";
        case Kind::Interleave: return "interleave";
        case Kind::Fixed: return "fixed:" + std::to_string(fixed_socket);
        }
        return "?";
    }

    // "first-touch" | "interleave" | "fixed:<s>"
    static AllocPolicy parse(const std::string& text) {
        if (text == "first-touch" || text == "firsttouch" || text == "local")
            return first_touch();
        if (text == "interleave")
            return interleave();
        if (text.rfind("fixed:", 0) == 0) {
            try {
                return fixed(static_cast<SocketId>(std::stoul(text.substr(6))));
            } catch (const std::exception&) {
            }
        }
        throw ConfigError("unknown allocation policy '" + text + "'");
    }

    friend bool operator==(const AllocPolicy&, const AllocPolicy&) = default;
};

// The NUMA machine: contiguous per-socket frame ranges, a general pool per socket and a
// per-socket page-cache of frames held back for page-table allocations.
//
// Not thread-safe; one simulation owns one machine.
class Machine {
public:
    explicit Machine(const MachineConfig& config) : config_(config) {
        config_.validate();
        kinds_.assign(static_cast<std::size_t>(config_.socket_count) * config_.frames_per_socket,
                      FrameKind::Free);
        sockets_.resize(config_.socket_count);
        for (SocketId s = 0; s < config_.socket_count; ++s) {
            auto& pool = sockets_[s];
            FrameNumber base = static_cast<FrameNumber>(s) * config_.frames_per_socket;
            // Pop order is ascending.
            for (std::uint64_t i = config_.pagecache_reserve; i-- > 0;)
                pool.pagecache.push_back(base + i);
            pool.next_fresh = base + config_.pagecache_reserve;
            pool.end = base + config_.frames_per_socket;
        }
    }

    Machine(const Machine&) = delete;
    Machine& operator=(const Machine&) = delete;

    const MachineConfig& config() const { return config_; }
    SocketId socket_count() const { return config_.socket_count; }
    std::uint64_t total_frames() const { return kinds_.size(); }

    SocketId socket_of(FrameNumber frame) const {
        return static_cast<SocketId>(frame / config_.frames_per_socket);
    }

    FrameKind kind_of(FrameNumber frame) const { return kinds_.at(frame); }

    Frame frame(FrameNumber number) const { return {number, socket_of(number), kind_of(number)}; }

    // Target socket for the next allocation under policy; advances the interleave cursor.
    SocketId choose_socket(AllocPolicy& policy, SocketId touching_socket) const {
        check_socket(touching_socket);
        switch (policy.kind) {
        case AllocPolicy::Kind::FirstTouch: return touching_socket;
        case AllocPolicy::Kind::Interleave: {
            SocketId s = policy.next_interleave_socket % config_.socket_count;
            policy.next_interleave_socket = (s + 1) % config_.socket_count;
            return s;
        }
        case AllocPolicy::Kind::Fixed: check_socket(policy.fixed_socket); return policy.fixed_socket;
        }
        return touching_socket;
    }

    // Strict: throws OutOfMemory rather than falling back to another socket.
    Frame allocate_frame(FrameKind kind, AllocPolicy& policy, SocketId touching_socket) {
        return allocate_on(kind, choose_socket(policy, touching_socket));
    }

    Frame allocate_on(FrameKind kind, SocketId socket) {
        check_socket(socket);
        if (kind == FrameKind::Free)
            throw std::invalid_argument("cannot allocate a frame of kind Free");
        auto& pool = sockets_[socket];
        FrameNumber number;
        if (kind == FrameKind::PageTable && !pool.pagecache.empty()) {
            number = pool.pagecache.back();
            pool.pagecache.pop_back();
        } else if (!pool.free_list.empty()) {
            number = pool.free_list.back();
            pool.free_list.pop_back();
        } else if (pool.next_fresh < pool.end) {
            number = pool.next_fresh++;
        } else {
            throw OutOfMemory(socket);
        }
        mark(number, kind, pool);
        return {number, socket, kind};
    }

    // 512 contiguous, 512-aligned data frames backing one 2 MiB page. Only never-used
    // frames qualify; freed frames are not coalesced.
    Frame allocate_huge(AllocPolicy& policy, SocketId touching_socket) {
        SocketId socket = choose_socket(policy, touching_socket);
        auto& pool = sockets_[socket];
        FrameNumber head = (pool.next_fresh + kFramesPerHugePage - 1) / kFramesPerHugePage * kFramesPerHugePage;
        if (head + kFramesPerHugePage > pool.end)
            throw OutOfMemory(socket);
        for (FrameNumber f = pool.next_fresh; f < head; ++f)
            pool.free_list.push_back(f);
        pool.next_fresh = head + kFramesPerHugePage;
        for (FrameNumber f = head; f < head + kFramesPerHugePage; ++f)
            mark(f, FrameKind::Data, pool);
        return {head, socket, FrameKind::Data};
    }

    void free_frame(FrameNumber number) {
        FrameKind kind = kinds_.at(number);
        if (kind == FrameKind::Free)
            throw DoubleFree(number);
        auto& pool = sockets_[socket_of(number)];
        if (kind == FrameKind::PageTable) {
            --pool.pagetable;
            if (pool.pagecache.size() < config_.pagecache_reserve)
                pool.pagecache.push_back(number);
            else
                pool.free_list.push_back(number);
        } else {
            --pool.data;
            pool.free_list.push_back(number);
        }
        kinds_[number] = FrameKind::Free;
    }

    void free_frame(const Frame& frame) { free_frame(frame.number); }

    void free_huge(FrameNumber head) {
        for (FrameNumber f = head; f < head + kFramesPerHugePage; ++f)
            free_frame(f);
    }

    Cycles access_cost(SocketId from_socket, FrameNumber target) const {
        return socket_of(target) == from_socket ? config_.local_latency : config_.remote_latency;
    }
    Cycles access_cost(SocketId from_socket, const Frame& target) const {
        return target.socket == from_socket ? config_.local_latency : config_.remote_latency;
    }

    std::uint64_t free_frames(SocketId s) const {
        return config_.frames_per_socket - sockets_.at(s).data - sockets_.at(s).pagetable;
    }
    std::uint64_t data_frames(SocketId s) const { return sockets_.at(s).data; }
    std::uint64_t pagetable_frames(SocketId s) const { return sockets_.at(s).pagetable; }
    std::uint64_t pagecache_available(SocketId s) const { return sockets_.at(s).pagecache.size(); }
    // Free frames outside the page-cache, i.e. what a data allocation can still get.
    std::uint64_t general_free_frames(SocketId s) const {
        const auto& p = sockets_.at(s);
        return p.free_list.size() + (p.end - p.next_fresh);
    }

    std::uint64_t total_data_frames() const {
        std::uint64_t n = 0;
        for (const auto& p : sockets_)
            n += p.data;
        return n;
    }
    std::uint64_t total_pagetable_frames() const {
        std::uint64_t n = 0;
        for (const auto& p : sockets_)
            n += p.pagetable;
        return n;
    }

private:
    struct SocketPool {
        std::vector<FrameNumber> pagecache;
        std::vector<FrameNumber> free_list;
        FrameNumber next_fresh = 0;
        FrameNumber end = 0;
        std::uint64_t data = 0;
        std::uint64_t pagetable = 0;
    };

    void check_socket(SocketId s) const {
        if (s >= config_.socket_count)
            throw std::out_of_range("socket " + std::to_string(s) + " does not exist");
    }

    void mark(FrameNumber number, FrameKind kind, SocketPool& pool) {
        kinds_[number] = kind;
        if (kind == FrameKind::PageTable)
            ++pool.pagetable;
        else
            ++pool.data;
    }

    MachineConfig config_;
    std::vector<FrameKind> kinds_;
    std::vector<SocketPool> sockets_;
};

} // namespace ptsim
