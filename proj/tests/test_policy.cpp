#include <gtest/gtest.h>

#include <set>

#include "ptsim/policy.hpp"

using namespace ptsim;

namespace {

constexpr std::uint64_t kMiB = 1 << 20;
constexpr std::uint64_t kBase = std::uint64_t{1} << 30;

MachineConfig machine_config(SocketId sockets = 4) {
    MachineConfig c;
    c.socket_count = sockets;
    c.frames_per_socket = 1 << 16;
    c.pagecache_reserve = 64;
    return c;
}

std::set<SocketId> pt_sockets(const AddressSpace& s) {
    std::set<SocketId> out;
    for (const auto& n : s.snapshot().nodes)
        out.insert(n.socket);
    return out;
}

// Walks every page of [kBase, kBase+bytes) from a cold core on socket.
WalkStats walk_all(const Machine& m, AddressSpace& s, SocketId socket, std::uint64_t bytes) {
    PscConfig psc;
    psc.enabled = false;
    TranslationEngine core(m, socket, {}, psc);
    for (std::uint64_t va = kBase; va < kBase + bytes; va += 4096)
        core.translate(s, va, false);
    return core.stats();
}

} // namespace

TEST(SystemPolicy, ParseRoundTrip) {
    for (const char* text : {"off", "per-process", "fixed:2", "all"})
        EXPECT_EQ(SystemPolicy::parse(text).to_string(), text);
    EXPECT_EQ(SystemPolicy::parse("fixed:3"), SystemPolicy::fixed(3));
    EXPECT_THROW(SystemPolicy::parse("fixed:"), ConfigError);
    EXPECT_THROW(SystemPolicy::parse("fixed:x"), ConfigError);
    EXPECT_THROW(SystemPolicy::parse("sometimes"), ConfigError);
}

TEST(PolicyEngine, FixedSocketMustExist) {
    PolicyEngine p(4);
    EXPECT_THROW(p.set_system_policy(SystemPolicy::fixed(4)), ConfigError);
    EXPECT_NO_THROW(p.set_system_policy(SystemPolicy::fixed(3)));
}

TEST(PolicyEngine, DisabledRejectsMaskRequest) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.set_system_policy(SystemPolicy::disabled());
    p.attach(s, SocketMask::single(0));
    EXPECT_FALSE(p.request_replication_mask(s, SocketMask::parse("0-1")));
    EXPECT_EQ(s.replication_mask(), SocketMask::single(0));
    EXPECT_EQ(s.root_for_socket(1), s.root_for_socket(0));
}

TEST(PolicyEngine, DisabledCollapsesExistingReplicasLazily) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::all(4));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    p.set_system_policy(SystemPolicy::disabled());
    EXPECT_EQ(s.replication_mask().size(), 4u); // untouched until the next mask operation
    p.request_replication_mask(s, SocketMask::all(4));
    EXPECT_EQ(s.replication_mask(), SocketMask::single(0));
}

TEST(PolicyEngine, PerProcessHonorsMask) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    EXPECT_TRUE(p.request_replication_mask(s, SocketMask::parse("0,2")));
    EXPECT_EQ(s.replication_mask(), SocketMask::parse("0,2"));
    EXPECT_THROW(p.request_replication_mask(s, SocketMask{}), std::invalid_argument);
}

TEST(PolicyEngine, FixedSocketPlacesEveryPageTableFrame) {
    Machine m(machine_config());
    AddressSpace a(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    AddressSpace b(m, AllocPolicy::interleave(), AllocPolicy::first_touch(), SocketMask::all(4));
    a.map(kBase, 8 * kMiB, Perms{true}, 0);
    b.map(kBase, 8 * kMiB, Perms{true}, 3);
    PolicyEngine p(4);
    p.attach(a, SocketMask::single(0));
    p.attach(b, SocketMask::single(3));
    p.set_system_policy(SystemPolicy::fixed(2));
    EXPECT_EQ(pt_sockets(a), std::set<SocketId>{2});
    EXPECT_EQ(pt_sockets(b), std::set<SocketId>{2});
    // New tables and per-process requests stay on the fixed socket.
    a.map(kBase + 512 * kMiB, 4096, Perms{true}, 1);
    EXPECT_FALSE(p.request_replication_mask(a, SocketMask::all(4)));
    EXPECT_EQ(pt_sockets(a), std::set<SocketId>{2});
    EXPECT_EQ(m.pagetable_frames(0) + m.pagetable_frames(1) + m.pagetable_frames(3), 0u);
}

TEST(PolicyEngine, AllProcessesReplicatesOnRunningSockets) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::all(4));
    p.set_system_policy(SystemPolicy::all_processes());
    EXPECT_EQ(s.ring_length(kBase, 4), 4u);
    EXPECT_EQ(s.ring_length(kBase, 1), 4u);
    for (SocketId i = 0; i < 4; ++i)
        EXPECT_EQ(m.socket_of(s.root_for_socket(i)), i);
}

TEST(PolicyEngine, ContextSwitchSelectsLocalRoot) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::parse("0-1"));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    TranslationEngine core1(m, 1);
    core1.translate(s, kBase, false);
    const auto epoch = s.epoch();
    const auto pt_frames = s.pagetable_frames();
    const FrameNumber r1 = p.on_context_switch(s, core1);
    EXPECT_EQ(r1, s.root_for_socket(1));
    EXPECT_EQ(m.socket_of(r1), 1u);
    EXPECT_EQ(core1.tlb().size(), 0u);
    EXPECT_EQ(p.on_context_switch(s, core1), r1);
    // Outside the mask: the primary root, remote for socket 3.
    TranslationEngine core3(m, 3);
    const FrameNumber r3 = p.on_context_switch(s, core3);
    EXPECT_EQ(r3, s.root_for_socket(0));
    EXPECT_EQ(m.socket_of(r3), 0u);
    // No page-table change and no walk cost.
    EXPECT_EQ(s.epoch(), epoch);
    EXPECT_EQ(s.pagetable_frames(), pt_frames);
    EXPECT_EQ(core3.stats().walk_cycles, 0u);
}

TEST(PolicyEngine, MigrationWithMitosisMakesWalksLocal) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 8 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    p.on_process_migration(s, 0, 1, true);
    const auto st = walk_all(m, s, 1, 8 * kMiB);
    EXPECT_GT(st.walks, 0u);
    EXPECT_EQ(st.remote_accesses, 0u);
    EXPECT_EQ(pt_sockets(s), std::set<SocketId>{1});
}

TEST(PolicyEngine, MigrationWithoutMitosisLeavesTablesRemote) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 8 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    const auto before = s.snapshot();
    p.on_process_migration(s, 0, 1, false);
    EXPECT_EQ(s.snapshot(), before);
    const auto st = walk_all(m, s, 1, 8 * kMiB);
    EXPECT_EQ(st.leaf_local, 0u);
    EXPECT_EQ(st.remote_leaf_fraction(), 1.0);
}

TEST(PolicyEngine, MigrationToSameSocketIsNoop) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    const auto before = s.snapshot();
    const auto epoch = s.epoch();
    p.on_process_migration(s, 0, 0, true);
    EXPECT_EQ(s.snapshot(), before);
    EXPECT_EQ(s.epoch(), epoch);
    EXPECT_THROW(p.on_process_migration(s, 0, 9, true), std::out_of_range);
}

TEST(PolicyEngine, MigrationPropagatesOutOfMemory) {
    MachineConfig c = machine_config(2);
    c.frames_per_socket = 2048;
    c.pagecache_reserve = 0;
    Machine m(c);
    AddressSpace s(m, AllocPolicy::fixed(0), AllocPolicy::fixed(0), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    // Fill socket 1 completely.
    while (true) {
        try {
            m.allocate_on(FrameKind::Data, 1);
        } catch (const OutOfMemory&) {
            break;
        }
    }
    PolicyEngine p(2);
    p.attach(s, SocketMask::single(0));
    const auto before = s.snapshot();
    EXPECT_THROW(p.on_process_migration(s, 0, 1, true), OutOfMemory);
    EXPECT_EQ(s.snapshot(), before);
}

TEST(PolicyEngine, AdvisorHookShipsEmpty) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    s.map(kBase, 4 * kMiB, Perms{true}, 0);
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    WalkStats st;
    st.remote_accesses = 100;
    EXPECT_FALSE(p.sample(s, st));
    p.set_advisor([](const AddressSpace&, const WalkStats& w) -> std::optional<SocketMask> {
        if (w.remote_fraction() > 0.5)
            return SocketMask::all(4);
        return std::nullopt;
    });
    EXPECT_TRUE(p.sample(s, st));
    EXPECT_EQ(s.replication_mask(), SocketMask::all(4));
}

TEST(PolicyEngine, DoubleAttachRejected) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::single(0));
    PolicyEngine p(4);
    p.attach(s, SocketMask::single(0));
    EXPECT_THROW(p.attach(s, SocketMask::single(0)), std::invalid_argument);
    p.detach(s);
    EXPECT_NO_THROW(p.attach(s, SocketMask::single(0)));
}
