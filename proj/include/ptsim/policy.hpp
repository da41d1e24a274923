#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ptsim/address_space.hpp"
#include "ptsim/translation.hpp"

namespace ptsim {

// System-wide replication policy.
struct SystemPolicy {
    enum class State : std::uint8_t { Disabled, PerProcess, FixedSocket, AllProcesses };

    State state = State::PerProcess;
    SocketId fixed_socket = 0;

    static SystemPolicy disabled() { return {State::Disabled, 0}; }
    static SystemPolicy per_process() { return {State::PerProcess, 0}; }
    static SystemPolicy fixed(SocketId s) { return {State::FixedSocket, s}; }
    static SystemPolicy all_processes() { return {State::AllProcesses, 0}; }

    // "off" | "per-process" | "fixed:<s>" | "all"
    static SystemPolicy parse(const std::string& text) {
        if (text == "off" || text == "disabled")
            return disabled();
        if (text == "per-process")
            return per_process();
        if (text == "all")
            return all_processes();
        if (text.rfind("fixed:", 0) == 0 && text.size() > 6 &&
            text.find_first_not_of("0123456789", 6) == std::string::npos)
            return fixed(static_cast<SocketId>(std::stoul(text.substr(6))));
        throw ConfigError("unknown system policy '" + text + "' (expected off|per-process|fixed:<s>|all)");
    }

    std::string to_string() const {
        switch (state) {
        case State::Disabled: return "off";
        case State::PerProcess: return "per-process";
        case State::FixedSocket: return "fixed:" + std::to_string(fixed_socket);
        case State::AllProcesses: return "all";
        }
        return "?";
    }

    friend bool operator==(const SystemPolicy&, const SystemPolicy&) = default;
};

// Applies the system-wide policy and per-process requests to attached address spaces and
// provides the scheduler hooks (context switch, process migration).
//
// FixedSocket overrides any per-process mask. Under Disabled, replicas left over from an
// earlier state are collapsed onto the primary socket at the next mask operation.
class PolicyEngine {
public:
    // Hook for counter-driven policies: given a core's walk statistics, optionally return a
    // replication mask to apply. None is installed by default.
    using Advisor = std::function<std::optional<SocketMask>(const AddressSpace&, const WalkStats&)>;

    explicit PolicyEngine(SocketId socket_count) : socket_count_(socket_count) {}

    const SystemPolicy& system_policy() const { return policy_; }

    void set_system_policy(SystemPolicy policy) {
        if (policy.state == SystemPolicy::State::FixedSocket && policy.fixed_socket >= socket_count_)
            throw ConfigError("fixed socket " + std::to_string(policy.fixed_socket) + " does not exist");
        policy_ = policy;
        for (auto& p : processes_)
            apply(p);
    }

    // runs_on: sockets the process has threads on.
    void attach(AddressSpace& space, SocketMask runs_on) {
        if (find(space))
            throw std::invalid_argument("address space already attached");
        processes_.push_back({&space, runs_on, std::nullopt});
        apply(processes_.back());
    }

    void detach(const AddressSpace& space) {
        std::erase_if(processes_, [&](const Process& p) { return p.space == &space; });
    }

    // Per-process request (numactl --pgtablerepl). Returns false when the system policy
    // overrides it.
    bool request_replication_mask(AddressSpace& space, SocketMask mask) {
        if (mask.empty())
            throw std::invalid_argument("replication mask must not be empty");
        Process* p = find(space);
        switch (policy_.state) {
        case SystemPolicy::State::Disabled: collapse(space); return false;
        case SystemPolicy::State::FixedSocket: apply_fixed(space); return false;
        case SystemPolicy::State::PerProcess:
            if (p)
                p->requested = mask;
            space.set_replication_mask(mask);
            return true;
        case SystemPolicy::State::AllProcesses:
            if (p)
                p->requested = mask;
            space.set_replication_mask(mask | (p ? p->runs_on : SocketMask{}));
            return true;
        }
        return false;
    }

    // Selects the root a core on core's socket loads; flushes that core's TLB.
    FrameNumber on_context_switch(const AddressSpace& space, TranslationEngine& core) const {
        core.flush();
        return space.root_for_socket(core.socket());
    }

    void on_process_migration(AddressSpace& space, SocketId from_socket, SocketId to_socket, bool mitosis_enabled,
                              bool eager_free = true) {
        if (from_socket >= socket_count_ || to_socket >= socket_count_)
            throw std::out_of_range("migration names a socket that does not exist");
        if (Process* p = find(space)) {
            p->runs_on.reset(from_socket);
            p->runs_on.set(to_socket);
        }
        if (from_socket == to_socket || !mitosis_enabled)
            return;
        switch (policy_.state) {
        case SystemPolicy::State::Disabled: collapse(space); return;
        case SystemPolicy::State::FixedSocket: return;
        case SystemPolicy::State::PerProcess:
        case SystemPolicy::State::AllProcesses: {
            const SocketMask mask = space.replication_mask();
            const SocketId source = mask.contains(from_socket) ? from_socket : space.primary_socket();
            space.migrate_pagetable(source, to_socket, eager_free);
            return;
        }
        }
    }

    void set_advisor(Advisor advisor) { advisor_ = std::move(advisor); }

    // Feeds counters to the advisor, if any, and applies its suggestion as a request.
    bool sample(AddressSpace& space, const WalkStats& stats) {
        if (!advisor_)
            return false;
        if (auto mask = advisor_(space, stats))
            return request_replication_mask(space, *mask);
        return false;
    }

private:
    struct Process {
        AddressSpace* space;
        SocketMask runs_on;
        std::optional<SocketMask> requested;
    };

    Process* find(const AddressSpace& space) {
        for (auto& p : processes_)
            if (p.space == &space)
                return &p;
        return nullptr;
    }

    void collapse(AddressSpace& space) {
        space.set_replication_mask(SocketMask::single(space.primary_socket()));
    }

    void apply_fixed(AddressSpace& space) {
        space.set_pt_policy(AllocPolicy::fixed(policy_.fixed_socket));
        space.consolidate_on(policy_.fixed_socket);
    }

    void apply(Process& p) {
        switch (policy_.state) {
        case SystemPolicy::State::Disabled:
        case SystemPolicy::State::PerProcess: return;
        case SystemPolicy::State::FixedSocket: apply_fixed(*p.space); return;
        case SystemPolicy::State::AllProcesses: {
            SocketMask mask = p.runs_on | p.requested.value_or(SocketMask{});
            if (!mask.empty())
                p.space->set_replication_mask(mask);
            return;
        }
        }
    }

    SocketId socket_count_;
    SystemPolicy policy_;
    std::vector<Process> processes_;
    Advisor advisor_;
};

} // namespace ptsim
