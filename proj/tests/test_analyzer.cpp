#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "ptsim/analyzer.hpp"
#include "ptsim/translation.hpp"

using namespace ptsim;

namespace {

constexpr std::uint64_t kMiB = 1 << 20;
constexpr std::uint64_t kBase = std::uint64_t{1} << 30;

std::string read_file(const std::string& name) {
    std::ifstream in(std::string(PTSIM_TEST_DATA) + "/" + name);
    EXPECT_TRUE(in) << name;
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

SnapshotDump load(const std::string& name) { return parse_dump(read_file(name)); }

MachineConfig machine_config(SocketId sockets = 4) {
    MachineConfig c;
    c.socket_count = sockets;
    c.frames_per_socket = 1 << 16;
    c.pagecache_reserve = 64;
    return c;
}

DumpNode make_node(SocketId socket, int level, FrameNumber frame, std::vector<std::pair<FrameNumber, SocketId>> targets) {
    DumpNode n;
    n.replica_socket = socket;
    n.level = level;
    n.frame = frame;
    n.socket = socket;
    unsigned i = 0;
    for (auto [f, s] : targets) {
        DumpEntry e;
        e.index = i++;
        e.frame = f;
        e.socket = s;
        n.entries.push_back(e);
    }
    return n;
}

// Four-level chain on one socket ending in `leaves` data pointers on data_socket(i).
template <class F>
SnapshotDump chain(SocketId sockets, SocketId home, int leaves, F data_socket) {
    SnapshotDump d;
    d.roots.assign(sockets, 10);
    d.nodes.push_back(make_node(home, 4, 10, {{11, home}}));
    d.nodes.push_back(make_node(home, 3, 11, {{12, home}}));
    d.nodes.push_back(make_node(home, 2, 12, {{13, home}}));
    std::vector<std::pair<FrameNumber, SocketId>> t;
    for (int i = 0; i < leaves; ++i)
        t.push_back({100u + static_cast<FrameNumber>(i), data_socket(i)});
    d.nodes.push_back(make_node(home, 1, 13, t));
    return d;
}

} // namespace

// ---------------------------------------------------------------- parse_dump

TEST(ParseDump, RootsAndOneNode) {
    auto d = parse_dump("{\"kind\":\"roots\",\"roots\":[5,5]}\n"
                        "{\"kind\":\"node\",\"replica_socket\":0,\"level\":4,\"frame\":5,\"socket\":0,\"entries\":[]}\n");
    EXPECT_EQ(d.socket_count(), 2u);
    ASSERT_EQ(d.nodes.size(), 1u);
    EXPECT_EQ(d.nodes[0].frame, 5u);
}

TEST(ParseDump, Errors) {
    auto line_of = [](const std::string& text) {
        try {
            parse_dump(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return std::size_t{0};
    };
    EXPECT_EQ(line_of(""), 1u);
    EXPECT_EQ(line_of("{\"kind\":\"node\",\"replica_socket\":0,\"level\":4,\"frame\":5,\"socket\":0,\"entries\":[]}\n"), 1u);
    EXPECT_EQ(line_of("{\"kind\":\"roots\",\"roots\":[1]}\n{\"kind\":\"leaf\"}\n"), 2u);
    EXPECT_EQ(line_of("{\"kind\":\"roots\",\"roots\":[1]}\n\nnot json\n"), 3u);
    EXPECT_EQ(line_of("{\"kind\":\"roots\",\"roots\":[1]}\n"
                      "{\"kind\":\"node\",\"replica_socket\":0,\"level\":5,\"frame\":5,\"socket\":0,\"entries\":[]}\n"),
              2u);
}

TEST(ParseDump, GoldenFilesRoundTrip) {
    for (const char* name : {"l4_pointers.jsonl", "split_leaves.jsonl", "interleaved_4s.jsonl"}) {
        const std::string text = read_file(name);
        EXPECT_EQ(dump_to_string(parse_dump(text)), text) << name;
    }
}

TEST(ParseDump, SnapshotRoundTrip) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::interleave(), AllocPolicy::interleave(), SocketMask::parse("1,3"));
    s.map(kBase, 6 * kMiB, Perms{true}, 0);
    s.protect(kBase, 4096, Perms{false});
    const auto dump = s.snapshot();
    EXPECT_EQ(parse_dump(dump_to_string(dump)), dump);
}

// ---------------------------------------------------------------- level_distribution

TEST(LevelDistribution, AllOnSocketZeroIsLocal) {
    const auto d = level_distribution(chain(4, 0, 64, [](int) { return SocketId{0}; }));
    for (int level = 1; level <= 4; ++level) {
        EXPECT_EQ(d.nodes(level, 0), 1u);
        for (SocketId s = 0; s < 4; ++s)
            EXPECT_EQ(d.remote_pct(level, s), 0.0);
    }
}

TEST(LevelDistribution, InterleavedLeafTargets) {
    const auto d = level_distribution(chain(4, 0, 512, [](int i) { return static_cast<SocketId>(i % 4); }));
    EXPECT_EQ(d.row(1, 0), (std::vector<std::uint64_t>{128, 128, 128, 128}));
    EXPECT_DOUBLE_EQ(d.remote_pct(1, 0), 0.75);
    EXPECT_EQ(d.remote_pct(2, 0), 0.0);
}

TEST(LevelDistribution, HandBuiltL4Row) {
    const auto d = level_distribution(load("l4_pointers.jsonl"));
    EXPECT_EQ(d.row(4, 1), (std::vector<std::uint64_t>{8, 3, 0, 1}));
    EXPECT_EQ(d.valid(4, 1), 12u);
    EXPECT_DOUBLE_EQ(d.remote_pct(4, 1), 9.0 / 12.0);
    EXPECT_EQ(d.nodes(4, 1), 1u);
    EXPECT_EQ(d.nodes(4, 0), 0u);
}

TEST(LevelDistribution, SumConsistency) {
    for (const char* name : {"l4_pointers.jsonl", "split_leaves.jsonl", "interleaved_4s.jsonl"}) {
        const auto dump = load(name);
        const auto d = level_distribution(dump);
        std::map<int, std::uint64_t> per_level;
        std::map<std::pair<int, SocketId>, std::uint64_t> valid;
        for (const auto& n : dump.nodes) {
            ++per_level[n.level];
            valid[{n.level, n.socket}] += n.entries.size();
        }
        for (int level = 1; level <= 4; ++level) {
            std::uint64_t sum = 0;
            for (SocketId s = 0; s < d.sockets; ++s) {
                sum += d.nodes(level, s);
                EXPECT_EQ(d.valid(level, s), (valid[{level, s}])) << name;
                EXPECT_GE(d.remote_pct(level, s), 0.0);
                EXPECT_LE(d.remote_pct(level, s), 1.0);
            }
            EXPECT_EQ(sum, per_level[level]) << name << " L" << level;
        }
    }
}

TEST(LevelDistribution, ReplicaViewFollowsOneTree) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::first_touch(), SocketMask::all(4));
    s.map(kBase, 8 * kMiB, Perms{true}, 0);
    const auto dump = s.snapshot();
    const auto all = level_distribution(dump);
    for (SocketId r = 0; r < 4; ++r) {
        const auto one = level_distribution(dump, r);
        for (int level = 1; level <= 4; ++level) {
            for (SocketId t = 0; t < 4; ++t)
                EXPECT_EQ(one.nodes(level, t), t == r ? all.nodes(level, r) : 0u);
            if (level > 1) {
                EXPECT_EQ(one.remote_pct(level, r), 0.0);
            }
        }
    }
    EXPECT_THROW(level_distribution(dump, 4), std::out_of_range);
}

TEST(LevelDistribution, RejectsOutOfRangeSockets) {
    auto d = chain(2, 0, 4, [](int) { return SocketId{5}; });
    EXPECT_THROW(level_distribution(d), std::invalid_argument);
}

// ---------------------------------------------------------------- remote_leaf_view

TEST(RemoteLeafView, FullyReplicatedIsLocal) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::first_touch(), AllocPolicy::interleave(), SocketMask::all(4));
    s.map(kBase, 8 * kMiB, Perms{true}, 0);
    const auto dump = s.snapshot();
    for (SocketId o = 0; o < 4; ++o)
        EXPECT_EQ(remote_leaf_view(dump, o), 0.0);
}

TEST(RemoteLeafView, SingleTableOnSocketZero) {
    const auto dump = chain(4, 0, 100, [](int) { return SocketId{0}; });
    EXPECT_EQ(remote_leaf_view(dump, 0), 0.0);
    for (SocketId o = 1; o < 4; ++o)
        EXPECT_EQ(remote_leaf_view(dump, o), 1.0);
    EXPECT_THROW(remote_leaf_view(dump, 4), std::out_of_range);
}

TEST(RemoteLeafView, SplitLeafTables) {
    const auto dump = load("split_leaves.jsonl");
    EXPECT_DOUBLE_EQ(remote_leaf_view(dump, 0), 0.5);
    EXPECT_DOUBLE_EQ(remote_leaf_view(dump, 1), 0.5);
    EXPECT_DOUBLE_EQ(remote_leaf_view(dump, 2), 1.0);
    EXPECT_DOUBLE_EQ(remote_leaf_view(dump, 3), 1.0);
}

TEST(RemoteLeafView, HugeLeavesCountAtLevelTwo) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::fixed(2), AllocPolicy::fixed(0), SocketMask::single(2), PageSize::Size2M);
    s.map(kBase, 8 * kMiB, Perms{true}, 0);
    const auto dump = s.snapshot();
    EXPECT_EQ(remote_leaf_view(dump, 2), 0.0);
    EXPECT_EQ(remote_leaf_view(dump, 0), 1.0);
    EXPECT_EQ(level_distribution(dump).valid(2, 2), 4u);
}

// Snapshot view against walks measured by the translation engine.
TEST(RemoteLeafView, AgreesWithEngine) {
    Machine m(machine_config());
    AddressSpace s(m, AllocPolicy::interleave(), AllocPolicy::first_touch(), SocketMask::single(0));
    const std::uint64_t bytes = 64 * kMiB;
    s.map(kBase, bytes, Perms{true}, 0);
    const auto dump = s.snapshot();
    std::mt19937_64 rng(11);
    for (SocketId o = 0; o < 4; ++o) {
        TranslationEngine core(m, o);
        for (int i = 0; i < 200000; ++i)
            core.translate(s, kBase + (rng() % (bytes / 4096)) * 4096, false);
        EXPECT_NEAR(core.stats().remote_leaf_fraction(), remote_leaf_view(dump, o), 0.01) << "observer " << o;
    }
}

// ---------------------------------------------------------------- rendering

TEST(RenderMatrix, ZeroCell) {
    LevelDistribution d(4);
    EXPECT_EQ(render_cell(d, 3, 0, 1, 1), "0 [0 0 0 0] ( 0%)");
    EXPECT_EQ(render_cell(d, 3, 0, 1, 2), "0 [ 0  0  0  0] ( 0%)");
}

TEST(RenderMatrix, GoldenFiles) {
    for (std::string base : {"l4_pointers", "split_leaves", "interleaved_4s"}) {
        const auto d = level_distribution(load(base + ".jsonl"));
        const std::string text = render_matrix(d);
        EXPECT_EQ(text, read_file(base + ".matrix")) << base;
        EXPECT_EQ(render_matrix(level_distribution(load(base + ".jsonl"))), text);
    }
}

TEST(RenderMatrix, HandBuiltCellInSocketOneBlock) {
    const std::string text = render_matrix(level_distribution(load("l4_pointers.jsonl")));
    const auto l4 = text.substr(text.find("L4"), text.find('\n', text.find("L4")) - text.find("L4"));
    const auto at = l4.find("[8 3 0 1] (75%)");
    ASSERT_NE(at, std::string::npos);
    const auto header = text.substr(0, text.find('\n'));
    EXPECT_GT(at, header.find("socket 1"));
    EXPECT_LT(at, header.find("socket 2"));
}

TEST(DistributionCsv, Golden) {
    std::ostringstream out;
    write_distribution_csv(out, level_distribution(load("interleaved_4s.jsonl")));
    EXPECT_EQ(out.str(), read_file("interleaved_4s.csv"));
    EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "level,socket,node_count,t0,t1,t2,t3,remote_pct");
}
