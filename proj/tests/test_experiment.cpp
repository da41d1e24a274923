#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "ptsim/experiment.hpp"

using namespace ptsim;

namespace {

constexpr std::uint64_t kKiB = 1024;
constexpr std::uint64_t kMiB = kKiB * 1024;
constexpr std::uint64_t kGiB = kMiB * 1024;
constexpr std::uint64_t kTiB = kGiB * 1024;

// Counts page-table pages by building the set of table indices level by level.
std::uint64_t oracle_pt_pages(std::uint64_t footprint) {
    std::uint64_t pages = 1; // L4
    for (std::uint64_t span : {512 * kGiB, kGiB, 2 * kMiB}) {
        std::uint64_t n = 0;
        for (std::uint64_t covered = 0; covered < footprint; covered += span)
            ++n;
        pages += std::max<std::uint64_t>(n, 1);
    }
    return pages;
}

ExperimentConfig tiny_config() {
    return parse_config(nlohmann::json::parse(R"({
        "name": "tiny",
        "seed": 3,
        "machine": {"sockets": 2, "memory_per_socket": "256MB", "pagecache_reserve": 64},
        "workloads": [
            {"name": "gups", "pattern": "uniform-random", "footprint": "16MB", "accesses": 20000, "write_ratio": 0.5},
            {"name": "stream", "pattern": "sequential-stream", "footprint": "16MB", "accesses": 20000}
        ],
        "scenarios": [
            {"placement": "LP-LD"},
            {"placement": "RP-LD"},
            {"placement": "RP-LD", "name": "RP-LD+M", "mitosis": "migrate"}
        ],
        "baseline": "LP-LD"
    })"));
}

std::string csv_of(const ExperimentConfig& c) {
    std::ostringstream out;
    write_results_csv(out, run_experiment(c), c.machine.socket_count);
    return out.str();
}

} // namespace

// ---------------------------------------------------------------- overhead

TEST(MemOverhead, MatchesIndependentCount) {
    for (std::uint64_t f : {std::uint64_t{1}, std::uint64_t{4096}, kMiB, 2 * kMiB + 1, 3 * kGiB, kTiB, 16 * kTiB}) {
        const auto o = mem_overhead(f, 1);
        EXPECT_EQ(o.pt_bytes, oracle_pt_pages(f) * 4096) << f;
        for (std::uint64_t r : {1u, 2u, 4u, 8u, 16u}) {
            const double fd = static_cast<double>(f);
            const double pt = static_cast<double>(oracle_pt_pages(f) * 4096);
            EXPECT_DOUBLE_EQ(mem_overhead(f, r).ratio, (fd + static_cast<double>(r) * pt) / (fd + pt));
        }
    }
}

TEST(MemOverhead, PublishedTable) {
    struct Row {
        std::uint64_t footprint;
        const char* pt;
        double r[5];
    };
    const Row rows[] = {{kMiB, "0.02MB", {1.0, 1.015, 1.046, 1.108, 1.231}},
                        {kGiB, "2.01MB", {1.0, 1.002, 1.006, 1.014, 1.029}},
                        {kTiB, "2.00GB", {1.0, 1.002, 1.006, 1.014, 1.029}},
                        {16 * kTiB, "32.0GB", {1.0, 1.002, 1.006, 1.014, 1.029}}};
    const std::uint64_t replicas[] = {1, 2, 4, 8, 16};
    for (const auto& row : rows) {
        EXPECT_EQ(format_size(mem_overhead(row.footprint, 1).pt_bytes), row.pt);
        for (int i = 0; i < 5; ++i) {
            const double ratio = mem_overhead(row.footprint, replicas[i]).ratio;
            EXPECT_NEAR(ratio, row.r[i], 0.0005) << row.pt << " r" << replicas[i];
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.3f", row.r[i]);
            EXPECT_EQ(format_ratio(ratio), buf);
        }
    }
}

TEST(MemOverhead, IdentityAndMonotonicity) {
    for (std::uint64_t f = 1; f < 64 * kTiB; f = f * 3 + 7)
        EXPECT_EQ(mem_overhead(f, 1).ratio, 1.0);
    for (std::uint64_t f : {kMiB, kGiB, kTiB})
        for (std::uint64_t r = 1; r < 32; ++r)
            EXPECT_LE(mem_overhead(f, r).ratio, mem_overhead(f, r + 1).ratio);
    for (std::uint64_t r : {2u, 4u, 16u}) {
        double prev = mem_overhead(kMiB, r).ratio;
        for (std::uint64_t f = 2 * kMiB; f <= 32 * kTiB; f *= 2) {
            const double cur = mem_overhead(f, r).ratio;
            EXPECT_LE(cur, prev + 1e-12) << f;
            prev = cur;
        }
    }
}

TEST(MemOverhead, RejectsZero) {
    EXPECT_THROW(mem_overhead(0, 1), std::invalid_argument);
    EXPECT_THROW(mem_overhead(kMiB, 0), std::invalid_argument);
}

TEST(MemOverhead, MemtableCsv) {
    std::ostringstream out;
    write_memtable(out, default_memtable_footprints(), default_memtable_replicas());
    EXPECT_EQ(out.str(), "footprint,pt_size,r1,r2,r4,r8,r16\n"
                         "1MB,0.02MB,1.000,1.015,1.046,1.108,1.231\n"
                         "1GB,2.01MB,1.000,1.002,1.006,1.014,1.029\n"
                         "1TB,2.00GB,1.000,1.002,1.006,1.014,1.029\n"
                         "16TB,32.0GB,1.000,1.002,1.006,1.014,1.029\n");
}

TEST(Sizes, FormatAndParse) {
    EXPECT_EQ(format_size(4096), "0.00MB");
    EXPECT_EQ(format_size(12 * 1024 * 1024 + 100), "12.0MB");
    EXPECT_EQ(format_size(512 * kMiB), "512MB");
    EXPECT_EQ(footprint_label(16 * kTiB), "16TB");
    EXPECT_EQ(footprint_label(1000), "1000B");
    EXPECT_EQ(parse_size("1MB"), kMiB);
    EXPECT_EQ(parse_size("16TB"), 16 * kTiB);
    EXPECT_EQ(parse_size("2GiB"), 2 * kGiB);
    EXPECT_EQ(parse_size("4k"), 4 * kKiB);
    EXPECT_EQ(parse_size("4096"), 4096u);
    EXPECT_THROW(parse_size("MB"), ConfigError);
    EXPECT_THROW(parse_size("3XB"), ConfigError);
    EXPECT_THROW(parse_size("99999999999PB"), ConfigError);
}

// ---------------------------------------------------------------- config

TEST(Config, ParsesAllBlocks) {
    const auto c = parse_config(nlohmann::json::parse(R"({
        "name": "x", "seed": 9,
        "machine": {"sockets": 2, "frames_per_socket": 8192, "local_latency": 100, "remote_latency": 300},
        "simulation": {"compute_cycles": 10, "tlb_l1": 32, "tlb_l2": 64, "psc": false},
        "system_policy": "fixed:1",
        "workloads": [{"name": "w", "pattern": "pointer-chase", "footprint": "8MB", "threads": [0, {"socket": 1}]}],
        "scenarios": [{"name": "s", "page_size": "2m", "mitosis": "replicate:all", "interference": "1",
                       "migration": {"at": 100, "from": 0, "to": 1}}],
        "output": {"csv": "out.csv"}
    })"));
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.machine.socket_count, 2u);
    EXPECT_EQ(c.machine.remote_latency, 300u);
    EXPECT_EQ(c.sim.compute_cycles, 10u);
    EXPECT_FALSE(c.sim.psc.enabled);
    EXPECT_EQ(c.sim.system_policy, SystemPolicy::fixed(1));
    ASSERT_EQ(c.workloads.size(), 1u);
    EXPECT_EQ(c.workloads[0].pattern, Pattern::PointerChase);
    ASSERT_EQ(c.workloads[0].threads.size(), 2u);
    EXPECT_EQ(c.workloads[0].threads[1].id, 1u);
    EXPECT_EQ(c.workloads[0].threads[1].socket, 1u);
    const auto& s = c.scenarios[0].scenario;
    EXPECT_EQ(s.page_size, PageSize::Size2M);
    EXPECT_EQ(s.mitosis, MitosisMode::Replicate);
    EXPECT_EQ(s.replicate_mask, SocketMask::all(2));
    EXPECT_EQ(s.interference, SocketMask::single(1));
    ASSERT_TRUE(s.migration);
    EXPECT_EQ(s.migration->at_access, 100u);
    EXPECT_EQ(c.output.csv, "out.csv");
}

TEST(Config, Errors) {
    auto bad = [](const char* text) { return parse_config(nlohmann::json::parse(text)); };
    EXPECT_THROW(bad(R"({"bogus": 1})"), ConfigError);
    EXPECT_THROW(bad(R"({"machine": {"sockets": 0}})"), ConfigError);
    EXPECT_THROW(bad(R"({"machine": {"socket": 2}})"), ConfigError);
    EXPECT_THROW(bad(R"({"workloads": [{"pattern": "uniform-random"}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"workloads": [{"name": "w", "pattern": "zigzag"}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"scenarios": [{"placement": "XX-LD"}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"scenarios": [{"name": "s", "page_size": "1g"}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"scenarios": [{"name": "s", "mitosis": "sometimes"}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"scenarios": [{}]})"), ConfigError);
    EXPECT_THROW(bad(R"({"seed": "one"})"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, ValidateResolvesNames) {
    auto c = tiny_config();
    EXPECT_NO_THROW(validate(c));
    auto missing_baseline = c;
    missing_baseline.baseline = "nope";
    EXPECT_THROW(validate(missing_baseline), ConfigError);
    auto unknown_workload = c;
    unknown_workload.scenarios[0].workload = "nope";
    EXPECT_THROW(validate(unknown_workload), ConfigError);
    auto duplicate = c;
    duplicate.workloads.push_back(c.workloads[0]);
    EXPECT_THROW(validate(duplicate), ConfigError);
    auto too_big = c;
    too_big.workloads[0].footprint_bytes = 4 * kGiB;
    EXPECT_THROW(validate(too_big), ConfigError);
    auto empty = c;
    empty.scenarios.clear();
    EXPECT_THROW(validate(empty), ConfigError);
}

TEST(Config, SampleConfigsLoad) {
    const std::filesystem::path dir = std::filesystem::path(PTSIM_TEST_DATA) / ".." / ".." / "configs";
    int seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json")
            continue;
        ++seen;
        const auto c = load_config(entry.path().string());
        EXPECT_NO_THROW(validate(c)) << entry.path();
    }
    EXPECT_GT(seen, 0);
}

// ---------------------------------------------------------------- presets

TEST(Preset, MigrationRows) {
    for (const char* name : {"migration-4k", "migration-2m"}) {
        const auto c = preset(name);
        EXPECT_NO_THROW(validate(c));
        ASSERT_EQ(c.scenarios.size(), 14u);
        EXPECT_EQ(c.baseline, c.scenarios[0].scenario.name);
        std::vector<std::string> names;
        for (const auto& s : c.scenarios)
            if (s.scenario.mitosis == MitosisMode::Off)
                names.push_back(s.scenario.name);
        const std::string p = std::string(name) == "migration-2m" ? "T" : "";
        EXPECT_EQ(names, (std::vector<std::string>{p + "LP-LD", p + "LP-RD", p + "RP-LD", p + "RP-RD", p + "RPI-LD",
                                                   p + "LP-RDI", p + "RPI-RDI"}));
        EXPECT_EQ(c.workloads.size(), 4u);
    }
}

TEST(Preset, MultisocketRows) {
    const auto c = preset("multisocket-4k");
    EXPECT_NO_THROW(validate(c));
    std::vector<std::string> names;
    for (const auto& s : c.scenarios)
        names.push_back(s.scenario.name);
    EXPECT_EQ(names, (std::vector<std::string>{"F", "F+M", "I", "I+M"}));
    for (const auto& w : c.workloads)
        EXPECT_EQ(w.threads.size(), 4u);
}

TEST(Preset, FragmentationSweep) {
    const auto c = preset("fragmentation");
    EXPECT_NO_THROW(validate(c));
    std::vector<double> probs;
    for (const auto& s : c.scenarios)
        if (s.scenario.mitosis == MitosisMode::Off && s.scenario.page_size == PageSize::Size2M &&
            s.scenario.name.find('@') != std::string::npos)
            probs.push_back(s.scenario.frag_fail_prob);
    EXPECT_EQ(probs, (std::vector<double>{0.0, 0.5, 0.9, 1.0}));
}

TEST(Preset, MemtableAndUnknown) {
    EXPECT_TRUE(preset("memtable").memtable);
    EXPECT_THROW(preset("migration-1g"), ConfigError);
    for (const auto& name : preset_names())
        EXPECT_NO_THROW(preset(name));
}

// ---------------------------------------------------------------- running

TEST(Run, CsvSchemaAndNormalization) {
    const auto c = tiny_config();
    const auto rows = run_experiment(c);
    ASSERT_EQ(rows.size(), 6u);
    for (const auto& r : rows)
        ASSERT_TRUE(r.normalized);
    EXPECT_EQ(*rows[0].normalized, 1.0);
    EXPECT_EQ(*rows[3].normalized, 1.0);
    EXPECT_GT(*rows[1].normalized, 1.0);
    std::ostringstream out;
    write_results_csv(out, rows, 2);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "workload,scenario,page_size,mitosis,total_cycles,walk_cycles,walk_fraction,"
                      "remote_leaf_pct_s0,remote_leaf_pct_s1,pt_frames,overhead");
    std::string line;
    int count = 0;
    while (std::getline(in, line)) {
        ++count;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10) << line;
    }
    EXPECT_EQ(count, 6);
    EXPECT_NE(out.str().find("gups,RP-LD+M,4k,migrate,"), std::string::npos);
}

TEST(Run, SameSeedSameBytes) {
    const auto c = tiny_config();
    EXPECT_EQ(csv_of(c), csv_of(c));
    auto other = c;
    other.seed = 4;
    EXPECT_NE(csv_of(c), csv_of(other));
}

TEST(Run, SeedPrecedence) {
    ::unsetenv("PTSIM_SEED");
    EXPECT_EQ(resolve_seed(std::nullopt, 5), 5u);
    ::setenv("PTSIM_SEED", "42", 1);
    EXPECT_EQ(resolve_seed(std::nullopt, 5), 42u);
    EXPECT_EQ(resolve_seed(7, 5), 7u);
    ::setenv("PTSIM_SEED", "4x", 1);
    EXPECT_THROW(resolve_seed(std::nullopt, 5), ConfigError);
    ::unsetenv("PTSIM_SEED");
}

TEST(Run, WritesDumps) {
    auto c = tiny_config();
    const auto dir = std::filesystem::temp_directory_path() / "ptsim_test_dumps";
    std::filesystem::remove_all(dir);
    c.output.dump_dir = dir.string();
    c.workloads.resize(1);
    run_experiment(c);
    const auto path = dir / dump_file_name("gups", "RP-LD+M");
    ASSERT_TRUE(std::filesystem::exists(path));
    std::ifstream in(path);
    const auto dump = parse_dump(in);
    EXPECT_EQ(dump.socket_count(), 2u);
    EXPECT_FALSE(dump.nodes.empty());
    std::filesystem::remove_all(dir);
}
