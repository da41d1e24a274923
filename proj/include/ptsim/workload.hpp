#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ptsim/address_space.hpp"
#include "ptsim/machine.hpp"
#include "ptsim/policy.hpp"
#include "ptsim/translation.hpp"

namespace ptsim {

enum class Pattern : std::uint8_t { UniformRandom, SequentialStream, HashProbe, PointerChase };

inline std::string to_string(Pattern p) {
    switch (p) {
    case Pattern::UniformRandom: return "uniform-random";
    case Pattern::SequentialStream: return "sequential-stream";
    case Pattern::HashProbe: return "hash-probe";
    case Pattern::PointerChase: return "pointer-chase";
    }
    return "?";
}

inline Pattern parse_pattern(const std::string& text) {
    for (Pattern p : {Pattern::UniformRandom, Pattern::SequentialStream, Pattern::HashProbe, Pattern::PointerChase})
        if (text == to_string(p))
            return p;
    throw ConfigError("unknown access pattern '" + text + "'");
}

struct ThreadPlacement {
    std::uint32_t id = 0;
    SocketId socket = 0;
};

struct WorkloadSpec {
    std::string name = "gups";
    Pattern pattern = Pattern::UniformRandom;
    std::uint64_t footprint_bytes = std::uint64_t{512} << 20;
    std::uint64_t accesses = 1'000'000; // per thread
    double write_ratio = 0.0;
    std::vector<ThreadPlacement> threads{{0, 0}};
    SocketId init_socket = 0;
    std::uint64_t seed = 1;

    void validate(const MachineConfig& machine) const {
        if (threads.empty())
            throw ConfigError("workload '" + name + "' has no threads");
        for (const auto& t : threads)
            if (t.socket >= machine.socket_count)
                throw ConfigError("workload '" + name + "' places a thread on a missing socket");
        if (init_socket >= machine.socket_count)
            throw ConfigError("workload '" + name + "' initializes on a missing socket");
        if (footprint_bytes == 0 || footprint_bytes % kHugePageSize != 0)
            throw ConfigError("workload '" + name + "' footprint must be a positive multiple of 2 MiB");
        const std::uint64_t usable =
            machine.socket_count * (machine.frames_per_socket - machine.pagecache_reserve) * kPageSize;
        if (footprint_bytes > usable)
            throw ConfigError("workload '" + name + "' footprint exceeds machine capacity");
        if (!(write_ratio >= 0.0 && write_ratio <= 1.0))
            throw ConfigError("write_ratio must be in [0, 1]");
    }

    SocketMask thread_sockets() const {
        SocketMask m;
        for (const auto& t : threads)
            m.set(t.socket);
        return m;
    }
};

enum class MitosisMode : std::uint8_t { Off, Replicate, MigrateOnMove };

struct MigrationEvent {
    std::uint64_t at_access = 0; // per-thread access index at which the move happens
    SocketId from = 0;
    SocketId to = 0;
    bool move_data = true;
};

struct ScenarioConfig {
    std::string name;
    PageSize page_size = PageSize::Size4K;
    MitosisMode mitosis = MitosisMode::Off;
    SocketMask replicate_mask;
    bool eager_free = true;
    AllocPolicy data_policy = AllocPolicy::first_touch();
    AllocPolicy pt_policy = AllocPolicy::first_touch();
    SocketMask interference;
    std::optional<MigrationEvent> migration;
    double frag_fail_prob = 0.0;

    std::string mitosis_label() const {
        switch (mitosis) {
        case MitosisMode::Off: return "off";
        case MitosisMode::Replicate: return "replicate:" + replicate_mask.to_string();
        case MitosisMode::MigrateOnMove: return "migrate";
        }
        return "?";
    }
};

// Knobs of the cost model that are not part of a scenario.
struct SimParams {
    Cycles compute_cycles = 50;
    double interference_factor = 1.5;
    TlbConfig tlb;
    PscConfig psc;
    PteCacheConfig pte_cache;
    SystemPolicy system_policy = SystemPolicy::per_process();
    std::uint64_t base_vaddr = std::uint64_t{1} << 30;
};

struct RunStats {
    std::string scenario;
    Cycles total_cycles = 0;
    Cycles init_cycles = 0;
    Cycles walk_cycles = 0;
    double walk_fraction = 0.0;
    std::vector<double> remote_leaf_fraction; // per socket, over walks issued from that socket
    std::vector<std::uint64_t> leaf_walks;    // per socket
    std::uint64_t accesses = 0;
    std::uint64_t walks = 0;
    std::uint64_t tlb_misses = 0;
    std::uint64_t local_walk_accesses = 0;
    std::uint64_t remote_walk_accesses = 0;
    std::uint64_t pt_frames = 0;
    std::uint64_t data_frames = 0;
    std::uint64_t huge_pages = 0;
    std::uint64_t fallback_chunks = 0;

    friend bool operator==(const RunStats&, const RunStats&) = default;
};

// Equal cycle, walk and frame measurements; ignores the scenario name and how the 2 MiB
// chunks came to be mapped (huge_pages, fallback_chunks).
inline bool same_measurements(const RunStats& a, const RunStats& b) {
    return a.total_cycles == b.total_cycles && a.init_cycles == b.init_cycles && a.walk_cycles == b.walk_cycles &&
           a.walk_fraction == b.walk_fraction && a.remote_leaf_fraction == b.remote_leaf_fraction &&
           a.leaf_walks == b.leaf_walks && a.accesses == b.accesses && a.walks == b.walks &&
           a.tlb_misses == b.tlb_misses && a.local_walk_accesses == b.local_walk_accesses &&
           a.remote_walk_accesses == b.remote_walk_accesses && a.pt_frames == b.pt_frames &&
           a.data_frames == b.data_frames;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// [0, n) without modulo bias worth caring about; portable across standard libraries.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

} // namespace detail

// Offsets into the footprint for one thread.
class AccessGenerator {
public:
    static constexpr std::uint64_t kTreeNodeBytes = 4096;
    static constexpr std::uint64_t kTreeFanout = 64;

    AccessGenerator(Pattern pattern, std::uint64_t footprint, std::uint64_t seed, std::uint32_t thread_index,
                    std::uint32_t thread_count)
        : pattern_(pattern), footprint_(footprint),
          rng_(detail::splitmix64(seed ^ (0xA5A5'0000'0000ULL + thread_index))) {
        cursor_ = footprint / kHugePageSize / std::max<std::uint32_t>(thread_count, 1) * thread_index * kHugePageSize;
    }

    std::uint64_t next_offset() {
        switch (pattern_) {
        case Pattern::UniformRandom: return detail::uniform_below(rng_, footprint_ / 8) * 8;
        case Pattern::SequentialStream: {
            std::uint64_t off = cursor_;
            cursor_ = (cursor_ + 64) % footprint_;
            return off;
        }
        case Pattern::HashProbe: {
            // Probe a random bucket, then the adjacent line of its chain.
            if (second_half_) {
                second_half_ = false;
                return (cursor_ + 64) % footprint_;
            }
            second_half_ = true;
            cursor_ = detail::uniform_below(rng_, footprint_ / 64) * 64;
            return cursor_;
        }
        case Pattern::PointerChase: {
            // Root-to-leaf descents of an implicit B-tree laid out breadth-first.
            const std::uint64_t nodes = footprint_ / kTreeNodeBytes;
            std::uint64_t off = tree_node_ * kTreeNodeBytes + detail::uniform_below(rng_, kTreeNodeBytes / 8) * 8;
            std::uint64_t child = tree_node_ * kTreeFanout + 1 + detail::uniform_below(rng_, kTreeFanout);
            tree_node_ = child < nodes ? child : 0;
            return off;
        }
        }
        return 0;
    }

    bool next_is_write(double write_ratio) {
        if (write_ratio <= 0.0)
            return false;
        return detail::uniform01(rng_) < write_ratio;
    }

private:
    Pattern pattern_;
    std::uint64_t footprint_;
    std::mt19937_64 rng_;
    std::uint64_t cursor_ = 0;
    bool second_half_ = false;
    std::uint64_t tree_node_ = 0;
};

// Each 2 MiB mapping attempt fails independently with prob and falls back to 4 KiB pages.
inline ScenarioConfig apply_fragmentation(ScenarioConfig scenario, double prob) {
    if (scenario.page_size != PageSize::Size2M)
        throw ConfigError("fragmentation applies to 2 MiB page mode only");
    if (!(prob >= 0.0 && prob <= 1.0))
        throw ConfigError("fragmentation probability must be in [0, 1]");
    scenario.frag_fail_prob = prob;
    return scenario;
}

// One simulated run: machine, one process, its threads' translation hardware.
class Simulation {
public:
    Simulation(const MachineConfig& machine_config, ScenarioConfig scenario, WorkloadSpec workload,
               SimParams params = {})
        : scenario_(std::move(scenario)), workload_(std::move(workload)), params_(params),
          machine_(machine_config), policy_(machine_config.socket_count) {
        validate();
        policy_.set_system_policy(params_.system_policy);
        const SocketId pt_home = scenario_.pt_policy.kind == AllocPolicy::Kind::Fixed
                                     ? scenario_.pt_policy.fixed_socket
                                     : workload_.init_socket;
        space_ = std::make_unique<AddressSpace>(machine_, scenario_.pt_policy, scenario_.data_policy,
                                                SocketMask::single(pt_home), scenario_.page_size);
        policy_.attach(*space_, workload_.thread_sockets() | SocketMask::single(workload_.init_socket));
        if (scenario_.mitosis == MitosisMode::Replicate)
            policy_.request_replication_mask(*space_, scenario_.replicate_mask);

        std::vector<double> multipliers(machine_.socket_count(), 1.0);
        for (SocketId s : scenario_.interference.sockets())
            multipliers[s] = params_.interference_factor;
        if (params_.pte_cache.lines > 0)
            for (SocketId s = 0; s < machine_.socket_count(); ++s)
                line_caches_.push_back(std::make_unique<PteLineCache>(params_.pte_cache.lines));
        auto make_engine = [&](SocketId socket) {
            TranslationEngine e(machine_, socket, params_.tlb, params_.psc, nullptr, params_.pte_cache.hit_cycles);
            e.set_latency_multipliers(multipliers);
            if (!line_caches_.empty())
                e.set_pte_cache(line_caches_[socket].get());
            return e;
        };
        init_engine_.emplace(make_engine(workload_.init_socket));
        for (const auto& t : workload_.threads)
            engines_.push_back(make_engine(t.socket));
        leaf_local_.assign(machine_.socket_count(), 0);
        leaf_remote_.assign(machine_.socket_count(), 0);
    }

    RunStats run() {
        RunStats stats;
        stats.scenario = scenario_.name;
        initialize(stats);
        stats.init_cycles = stats.total_cycles;

        if (scenario_.mitosis == MitosisMode::MigrateOnMove && !scenario_.migration)
            follow_thread(workload_.threads.front().socket);

        std::vector<AccessGenerator> generators;
        for (std::uint32_t i = 0; i < workload_.threads.size(); ++i)
            generators.emplace_back(workload_.pattern, workload_.footprint_bytes,
                                    workload_.seed + workload_.threads[i].id, i,
                                    static_cast<std::uint32_t>(workload_.threads.size()));
        for (auto& e : engines_)
            policy_.on_context_switch(*space_, e);

        for (std::uint64_t round = 0; round < workload_.accesses; ++round) {
            if (scenario_.migration && scenario_.migration->at_access == round)
                migrate(*scenario_.migration);
            for (std::size_t t = 0; t < engines_.size(); ++t) {
                const std::uint64_t va = params_.base_vaddr + generators[t].next_offset();
                access(engines_[t], va, generators[t].next_is_write(workload_.write_ratio), stats);
            }
        }

        WalkStats walk = init_engine_->stats();
        for (const auto& e : engines_)
            walk += e.stats();
        stats.walks = walk.walks;
        stats.tlb_misses = walk.tlb_misses;
        stats.local_walk_accesses = walk.local_accesses;
        stats.remote_walk_accesses = walk.remote_accesses;
        stats.walk_fraction =
            stats.total_cycles == 0 ? 0.0 : static_cast<double>(stats.walk_cycles) / static_cast<double>(stats.total_cycles);
        for (SocketId s = 0; s < machine_.socket_count(); ++s) {
            const auto n = leaf_local_[s] + leaf_remote_[s];
            stats.leaf_walks.push_back(n);
            stats.remote_leaf_fraction.push_back(n == 0 ? 0.0 : static_cast<double>(leaf_remote_[s]) / static_cast<double>(n));
        }
        stats.pt_frames = space_->pagetable_frames();
        stats.data_frames = space_->data_frames();
        return stats;
    }

    const AddressSpace& space() const { return *space_; }
    AddressSpace& space() { return *space_; }
    const Machine& machine() const { return machine_; }

private:
    void validate() const {
        workload_.validate(machine_.config());
        params_.tlb.validate();
        const SocketMask all = SocketMask::all(machine_.socket_count());
        if (scenario_.mitosis == MitosisMode::Replicate &&
            (scenario_.replicate_mask.empty() || !scenario_.replicate_mask.subset_of(all)))
            throw ConfigError("scenario '" + scenario_.name + "' has an invalid replication mask");
        if (!scenario_.interference.subset_of(all))
            throw ConfigError("scenario '" + scenario_.name + "' interferes on a missing socket");
        for (const AllocPolicy* p : {&scenario_.data_policy, &scenario_.pt_policy})
            if (p->kind == AllocPolicy::Kind::Fixed && p->fixed_socket >= machine_.socket_count())
                throw ConfigError("scenario '" + scenario_.name + "' fixes allocation on a missing socket");
        if (scenario_.frag_fail_prob != 0.0 && scenario_.page_size != PageSize::Size2M)
            throw ConfigError("scenario '" + scenario_.name + "' sets fragmentation without 2 MiB pages");
        if (!(scenario_.frag_fail_prob >= 0.0 && scenario_.frag_fail_prob <= 1.0))
            throw ConfigError("fragmentation probability must be in [0, 1]");
        if (const auto& m = scenario_.migration;
            m && (m->from >= machine_.socket_count() || m->to >= machine_.socket_count()))
            throw ConfigError("scenario '" + scenario_.name + "' migrates to or from a missing socket");
        if (!(params_.interference_factor >= 1.0))
            throw ConfigError("interference factor must be >= 1");
    }

    // Maps the footprint chunk by chunk, then touches every 4 KiB page once from the init socket.
    void initialize(RunStats& stats) {
        std::mt19937_64 frag_rng(detail::splitmix64(workload_.seed ^ 0xF4A6'0000'0000'0000ULL));
        const SocketId init = workload_.init_socket;
        const std::uint64_t chunks = workload_.footprint_bytes / kHugePageSize;
        for (std::uint64_t c = 0; c < chunks; ++c) {
            const std::uint64_t va = params_.base_vaddr + c * kHugePageSize;
            bool huge = scenario_.page_size == PageSize::Size2M;
            if (huge && detail::uniform01(frag_rng) < scenario_.frag_fail_prob)
                huge = false;
            if (huge) {
                try {
                    space_->map(va, kHugePageSize, Perms{true}, init, PageSize::Size2M);
                    ++stats.huge_pages;
                    continue;
                } catch (const OutOfMemory&) {
                    // no contiguous 2 MiB run left: fall through to 4 KiB pages
                }
            }
            if (scenario_.page_size == PageSize::Size2M)
                ++stats.fallback_chunks;
            space_->map(va, kHugePageSize, Perms{true}, init, PageSize::Size4K);
        }
        for (std::uint64_t off = 0; off < workload_.footprint_bytes; off += kPageSize)
            access(*init_engine_, params_.base_vaddr + off, true, stats);
    }

    void access(TranslationEngine& engine, std::uint64_t va, bool is_write, RunStats& stats) {
        const Translation t = engine.translate(*space_, va, is_write);
        Cycles cycles = params_.compute_cycles + engine.memory_cost(t.data_frame);
        if (!t.tlb_hit) {
            cycles += t.walk.cycles;
            stats.walk_cycles += t.walk.cycles;
            const auto& leaf = t.walk.leaf_access();
            (leaf.local ? leaf_local_ : leaf_remote_)[engine.socket()]++;
        }
        stats.total_cycles += cycles;
        ++stats.accesses;
    }

    bool pagetable_local_to(SocketId socket) const {
        if (!space_->replication_mask().contains(socket))
            return false;
        for (const auto& n : space_->snapshot().nodes)
            if (n.replica_socket == socket && n.socket != socket)
                return false;
        return true;
    }

    // With migrate-on-move, a process running away from its page-table pulls it along.
    void follow_thread(SocketId socket) {
        if (!pagetable_local_to(socket))
            policy_.on_process_migration(*space_, space_->primary_socket(), socket, true, scenario_.eager_free);
    }

    void migrate(const MigrationEvent& m) {
        for (auto& e : engines_)
            if (e.socket() == m.from)
                e.set_socket(m.to);
        if (m.move_data)
            space_->migrate_data(params_.base_vaddr, workload_.footprint_bytes, m.from, m.to);
        policy_.on_process_migration(*space_, m.from, m.to, scenario_.mitosis == MitosisMode::MigrateOnMove,
                                     scenario_.eager_free);
    }

    ScenarioConfig scenario_;
    WorkloadSpec workload_;
    SimParams params_;
    Machine machine_;
    PolicyEngine policy_;
    std::unique_ptr<AddressSpace> space_;
    std::vector<std::unique_ptr<PteLineCache>> line_caches_;
    std::optional<TranslationEngine> init_engine_;
    std::vector<TranslationEngine> engines_;
    std::vector<std::uint64_t> leaf_local_;
    std::vector<std::uint64_t> leaf_remote_;
};

// Runs one scenario on a fresh machine. If dump is given it receives the final page-table.
inline RunStats run_scenario(const MachineConfig& machine, const ScenarioConfig& scenario,
                             const WorkloadSpec& workload, const SimParams& params = {},
                             SnapshotDump* dump = nullptr) {
    Simulation sim(machine, scenario, workload, params);
    RunStats stats = sim.run();
    if (dump)
        *dump = sim.space().snapshot();
    return stats;
}

// --- Placement matrix for the workload-migration scenario ---
// A is the socket the workload runs on, B another socket.

enum class Placement : std::uint8_t { LP_LD, LP_RD, RP_LD, RP_RD, RPI_LD, LP_RDI, RPI_RDI };

inline constexpr Placement kAllPlacements[] = {Placement::LP_LD,  Placement::LP_RD,  Placement::RP_LD,
                                               Placement::RP_RD,  Placement::RPI_LD, Placement::LP_RDI,
                                               Placement::RPI_RDI};

inline std::string to_string(Placement p) {
    switch (p) {
    case Placement::LP_LD: return "LP-LD";
    case Placement::LP_RD: return "LP-RD";
    case Placement::RP_LD: return "RP-LD";
    case Placement::RP_RD: return "RP-RD";
    case Placement::RPI_LD: return "RPI-LD";
    case Placement::LP_RDI: return "LP-RDI";
    case Placement::RPI_RDI: return "RPI-RDI";
    }
    return "?";
}

inline Placement parse_placement(std::string text) {
    if (!text.empty() && text.front() == 'T')
        text.erase(0, 1);
    for (Placement p : kAllPlacements)
        if (text == to_string(p))
            return p;
    throw ConfigError("unknown placement '" + text + "'");
}

struct PlacementSpec {
    bool remote_pt = false;
    bool remote_data = false;
    bool interfere_pt = false;
    bool interfere_data = false;
};

inline PlacementSpec placement_spec(Placement p) {
    switch (p) {
    case Placement::LP_LD: return {false, false, false, false};
    case Placement::LP_RD: return {false, true, false, false};
    case Placement::RP_LD: return {true, false, false, false};
    case Placement::RP_RD: return {true, true, false, false};
    case Placement::RPI_LD: return {true, false, true, false};
    case Placement::LP_RDI: return {false, true, false, true};
    case Placement::RPI_RDI: return {true, true, true, true};
    }
    return {};
}

// Scenario for one placement. Names follow the "T" prefix for 2 MiB pages and "+M" for
// page-table migration enabled.
inline ScenarioConfig migration_scenario(Placement placement, PageSize page_size, bool mitosis,
                                         SocketId local = 0, SocketId remote = 1) {
    const PlacementSpec spec = placement_spec(placement);
    ScenarioConfig s;
    s.name = (page_size == PageSize::Size2M ? "T" : "") + to_string(placement) + (mitosis ? "+M" : "");
    s.page_size = page_size;
    s.mitosis = mitosis ? MitosisMode::MigrateOnMove : MitosisMode::Off;
    s.pt_policy = AllocPolicy::fixed(spec.remote_pt ? remote : local);
    s.data_policy = AllocPolicy::fixed(spec.remote_data ? remote : local);
    if (spec.interfere_pt || spec.interfere_data)
        s.interference.set(remote);
    return s;
}

// Multi-socket configurations: first-touch (F) or interleave (I), optionally replicated (+M).
inline ScenarioConfig multisocket_scenario(AllocPolicy data_policy, AllocPolicy pt_policy,
                                           std::optional<SocketMask> mitosis_mask, PageSize page_size) {
    ScenarioConfig s;
    auto letter = [](const AllocPolicy& p) {
        switch (p.kind) {
        case AllocPolicy::Kind::FirstTouch: return std::string("F");
        case AllocPolicy::Kind::Interleave: return std::string("I");
        case AllocPolicy::Kind::Fixed: return "X" + std::to_string(p.fixed_socket);
        }
        return std::string("?");
    };
    s.name = (page_size == PageSize::Size2M ? "T" : "") + letter(data_policy) + (mitosis_mask ? "+M" : "");
    s.page_size = page_size;
    s.data_policy = data_policy;
    s.pt_policy = pt_policy;
    if (mitosis_mask) {
        s.mitosis = MitosisMode::Replicate;
        s.replicate_mask = *mitosis_mask;
    }
    return s;
}

inline RunStats run_multisocket(const MachineConfig& machine, AllocPolicy data_policy, AllocPolicy pt_policy,
                                std::optional<SocketMask> mitosis_mask, const WorkloadSpec& workload,
                                PageSize page_size = PageSize::Size4K, const SimParams& params = {}) {
    if (workload.thread_sockets() != SocketMask::all(machine.socket_count))
        throw ConfigError("multi-socket runs need threads on every socket");
    return run_scenario(machine, multisocket_scenario(data_policy, pt_policy, mitosis_mask, page_size), workload,
                        params);
}

} // namespace ptsim
