#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptsim/overhead.hpp"
#include "ptsim/snapshot.hpp"
#include "ptsim/workload.hpp"

namespace ptsim {

struct ScenarioEntry {
    ScenarioConfig scenario;
    std::string workload; // empty: every workload in the config
};

struct OutputConfig {
    std::string csv;      // empty: stdout
    std::string dump_dir; // empty: no dumps
};

struct ExperimentConfig {
    std::string name;
    MachineConfig machine;
    SimParams sim;
    std::uint64_t seed = 1;
    std::vector<WorkloadSpec> workloads;
    std::vector<ScenarioEntry> scenarios;
    std::string baseline; // scenario name that normalizes each workload's rows
    OutputConfig output;
    // memtable experiments compute the closed-form overhead table instead of simulating
    bool memtable = false;
    std::vector<std::uint64_t> memtable_footprints = default_memtable_footprints();
    std::vector<std::uint64_t> memtable_replicas = default_memtable_replicas();
};

struct ResultRow {
    std::string workload;
    std::string scenario;
    PageSize page_size = PageSize::Size4K;
    std::string mitosis;
    RunStats stats;
    std::optional<double> normalized; // total_cycles / baseline total_cycles
};

// --- parsing ---

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    if (!obj.is_object())
        throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* k : known)
            ok = ok || key == k;
        if (!ok)
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback) {
    auto it = obj.find(key);
    return it == obj.end() ? fallback : it->template get<T>();
}

inline std::uint64_t get_size(const json& obj, const char* key, std::uint64_t fallback) {
    auto it = obj.find(key);
    if (it == obj.end())
        return fallback;
    if (it->is_string())
        return parse_size(it->get<std::string>());
    return it->get<std::uint64_t>();
}

inline PageSize parse_page_size(const std::string& text) {
    if (text == "4k" || text == "4K")
        return PageSize::Size4K;
    if (text == "2m" || text == "2M")
        return PageSize::Size2M;
    throw ConfigError("page size must be 4k or 2m, got '" + text + "'");
}

inline SocketMask parse_mask(const std::string& text, SocketId sockets) {
    if (text == "all")
        return SocketMask::all(sockets);
    return SocketMask::parse(text);
}

inline void parse_mitosis(ScenarioConfig& s, const std::string& text, SocketId sockets) {
    if (text == "off") {
        s.mitosis = MitosisMode::Off;
    } else if (text == "migrate" || text == "migrate-on-move") {
        s.mitosis = MitosisMode::MigrateOnMove;
    } else if (text.rfind("replicate:", 0) == 0) {
        s.mitosis = MitosisMode::Replicate;
        s.replicate_mask = parse_mask(text.substr(10), sockets);
    } else {
        throw ConfigError("mitosis must be off, migrate or replicate:<mask>, got '" + text + "'");
    }
}

inline MachineConfig parse_machine(const json& j) {
    reject_unknown(j,
                   {"sockets", "frames_per_socket", "memory_per_socket", "local_latency", "remote_latency", "local_bw",
                    "remote_bw", "pagecache_reserve"},
                   "machine");
    MachineConfig m;
    m.socket_count = get_or<SocketId>(j, "sockets", m.socket_count);
    m.frames_per_socket = get_or<std::uint64_t>(j, "frames_per_socket", m.frames_per_socket);
    if (j.contains("memory_per_socket"))
        m.frames_per_socket = get_size(j, "memory_per_socket", 0) / kPageSize;
    m.local_latency = get_or<Cycles>(j, "local_latency", m.local_latency);
    m.remote_latency = get_or<Cycles>(j, "remote_latency", m.remote_latency);
    m.local_bw = get_or<double>(j, "local_bw", m.local_bw);
    m.remote_bw = get_or<double>(j, "remote_bw", m.remote_bw);
    m.pagecache_reserve = get_or<std::uint64_t>(j, "pagecache_reserve", m.pagecache_reserve);
    m.validate();
    return m;
}

inline SimParams parse_sim(const json& j) {
    reject_unknown(j,
                   {"compute_cycles", "interference_factor", "tlb_l1", "tlb_l2", "psc", "psc_entries",
                    "pte_cache_lines", "pte_cache_hit_cycles", "base_vaddr"},
                   "simulation");
    SimParams p;
    p.compute_cycles = get_or<Cycles>(j, "compute_cycles", p.compute_cycles);
    p.interference_factor = get_or<double>(j, "interference_factor", p.interference_factor);
    p.tlb.l1_entries = get_or<std::size_t>(j, "tlb_l1", p.tlb.l1_entries);
    p.tlb.l2_entries = get_or<std::size_t>(j, "tlb_l2", p.tlb.l2_entries);
    p.psc.enabled = get_or<bool>(j, "psc", p.psc.enabled);
    p.psc.entries_per_level = get_or<std::size_t>(j, "psc_entries", p.psc.entries_per_level);
    p.pte_cache.lines = get_or<std::size_t>(j, "pte_cache_lines", p.pte_cache.lines);
    p.pte_cache.hit_cycles = get_or<Cycles>(j, "pte_cache_hit_cycles", p.pte_cache.hit_cycles);
    p.base_vaddr = get_size(j, "base_vaddr", p.base_vaddr);
    p.tlb.validate();
    return p;
}

inline WorkloadSpec parse_workload(const json& j) {
    reject_unknown(j, {"name", "pattern", "footprint", "accesses", "write_ratio", "threads", "init_socket"},
                   "workload");
    WorkloadSpec w;
    w.name = j.at("name").get<std::string>();
    w.pattern = parse_pattern(get_or<std::string>(j, "pattern", to_string(w.pattern)));
    w.footprint_bytes = get_size(j, "footprint", w.footprint_bytes);
    w.accesses = get_or<std::uint64_t>(j, "accesses", w.accesses);
    w.write_ratio = get_or<double>(j, "write_ratio", w.write_ratio);
    if (auto it = j.find("threads"); it != j.end()) {
        w.threads.clear();
        std::uint32_t next_id = 0;
        for (const auto& t : *it) {
            if (t.is_number()) {
                w.threads.push_back({next_id++, t.get<SocketId>()});
            } else {
                reject_unknown(t, {"id", "socket"}, "thread");
                w.threads.push_back({get_or<std::uint32_t>(t, "id", next_id), t.at("socket").get<SocketId>()});
                next_id = w.threads.back().id + 1;
            }
        }
    }
    w.init_socket = get_or<SocketId>(j, "init_socket", w.threads.empty() ? 0 : w.threads.front().socket);
    return w;
}

inline ScenarioEntry parse_scenario(const json& j, SocketId sockets) {
    reject_unknown(j,
                   {"name", "workload", "placement", "page_size", "mitosis", "data_policy", "pt_policy",
                    "interference", "migration", "frag_fail_prob", "eager_free"},
                   "scenario");
    ScenarioEntry e;
    ScenarioConfig& s = e.scenario;
    const PageSize ps = parse_page_size(get_or<std::string>(j, "page_size", "4k"));
    if (auto it = j.find("placement"); it != j.end())
        s = migration_scenario(parse_placement(it->get<std::string>()), ps, false);
    s.page_size = ps;
    s.name = get_or<std::string>(j, "name", s.name);
    if (s.name.empty())
        throw ConfigError("scenario needs a name or a placement");
    e.workload = get_or<std::string>(j, "workload", "");
    parse_mitosis(s, get_or<std::string>(j, "mitosis", "off"), sockets);
    if (j.contains("data_policy"))
        s.data_policy = AllocPolicy::parse(j["data_policy"].get<std::string>());
    if (j.contains("pt_policy"))
        s.pt_policy = AllocPolicy::parse(j["pt_policy"].get<std::string>());
    if (j.contains("interference")) {
        const auto text = j["interference"].get<std::string>();
        s.interference = text.empty() || text == "none" ? SocketMask{} : parse_mask(text, sockets);
    }
    if (auto it = j.find("migration"); it != j.end()) {
        reject_unknown(*it, {"at", "from", "to", "move_data"}, "migration");
        MigrationEvent m;
        m.at_access = it->at("at").get<std::uint64_t>();
        m.from = it->at("from").get<SocketId>();
        m.to = it->at("to").get<SocketId>();
        m.move_data = get_or<bool>(*it, "move_data", true);
        s.migration = m;
    }
    if (j.contains("frag_fail_prob"))
        s = apply_fragmentation(s, j["frag_fail_prob"].get<double>());
    s.eager_free = get_or<bool>(j, "eager_free", s.eager_free);
    return e;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using namespace detail;
    try {
        reject_unknown(j,
                       {"name", "seed", "machine", "simulation", "system_policy", "workloads", "scenarios",
                        "baseline", "output", "memtable"},
                       "config");
        ExperimentConfig c;
        c.name = get_or<std::string>(j, "name", "");
        c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
        if (j.contains("machine"))
            c.machine = parse_machine(j["machine"]);
        if (j.contains("simulation"))
            c.sim = parse_sim(j["simulation"]);
        if (j.contains("system_policy"))
            c.sim.system_policy = SystemPolicy::parse(j["system_policy"].get<std::string>());
        if (auto it = j.find("memtable"); it != j.end()) {
            reject_unknown(*it, {"footprints", "replicas"}, "memtable");
            c.memtable = true;
            if (it->contains("footprints")) {
                c.memtable_footprints.clear();
                for (const auto& f : (*it)["footprints"])
                    c.memtable_footprints.push_back(f.is_string() ? parse_size(f.get<std::string>())
                                                                  : f.get<std::uint64_t>());
            }
            if (it->contains("replicas"))
                c.memtable_replicas = (*it)["replicas"].get<std::vector<std::uint64_t>>();
        }
        for (const auto& w : j.value("workloads", json::array()))
            c.workloads.push_back(parse_workload(w));
        for (const auto& s : j.value("scenarios", json::array()))
            c.scenarios.push_back(parse_scenario(s, c.machine.socket_count));
        c.baseline = get_or<std::string>(j, "baseline", "");
        if (auto it = j.find("output"); it != j.end()) {
            reject_unknown(*it, {"csv", "dump_dir"}, "output");
            c.output.csv = get_or<std::string>(*it, "csv", "");
            c.output.dump_dir = get_or<std::string>(*it, "dump_dir", "");
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

// Checks that names resolve and every workload fits the machine.
inline void validate(const ExperimentConfig& c) {
    c.machine.validate();
    if (c.memtable)
        return;
    if (c.workloads.empty())
        throw ConfigError("config has no workloads");
    if (c.scenarios.empty())
        throw ConfigError("config has no scenarios");
    std::map<std::string, int> names;
    for (const auto& w : c.workloads) {
        if (names[w.name]++)
            throw ConfigError("duplicate workload '" + w.name + "'");
        w.validate(c.machine);
    }
    bool baseline_found = c.baseline.empty();
    for (const auto& s : c.scenarios) {
        if (!s.workload.empty() && !names.count(s.workload))
            throw ConfigError("scenario '" + s.scenario.name + "' names unknown workload '" + s.workload + "'");
        baseline_found = baseline_found || s.scenario.name == c.baseline;
    }
    if (!baseline_found)
        throw ConfigError("baseline '" + c.baseline + "' is not a scenario");
}

// --- presets ---

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> v = {"migration-4k",   "migration-2m",  "multisocket-4k",
                                               "multisocket-2m", "fragmentation", "memtable"};
    return v;
}

// The four standard access patterns. 2 MiB runs use a footprint well past the TLB's 2 MiB reach.
inline std::vector<WorkloadSpec> standard_workloads(PageSize page_size, std::vector<ThreadPlacement> threads,
                                                    SocketId init_socket, std::uint64_t seed) {
    struct Shape {
        const char* name;
        Pattern pattern;
        double write_ratio;
    };
    const Shape shapes[] = {{"gups", Pattern::UniformRandom, 0.5},
                            {"hashjoin", Pattern::HashProbe, 0.0},
                            {"btree", Pattern::PointerChase, 0.0},
                            {"stream", Pattern::SequentialStream, 0.3}};
    std::vector<WorkloadSpec> out;
    for (const auto& sh : shapes) {
        WorkloadSpec w;
        w.name = sh.name;
        w.pattern = sh.pattern;
        w.write_ratio = sh.write_ratio;
        w.footprint_bytes = page_size == PageSize::Size4K ? std::uint64_t{512} << 20 : std::uint64_t{8} << 30;
        w.accesses = page_size == PageSize::Size4K ? 8'000'000 : 2'000'000;
        w.threads = threads;
        w.init_socket = init_socket;
        w.seed = seed;
        out.push_back(w);
    }
    return out;
}

inline MachineConfig preset_machine(PageSize page_size) {
    MachineConfig m;
    if (page_size == PageSize::Size2M)
        m.frames_per_socket = (std::uint64_t{16} << 30) / kPageSize;
    return m;
}

inline ExperimentConfig preset(const std::string& name, std::uint64_t seed = 1) {
    ExperimentConfig c;
    c.name = name;
    c.seed = seed;
    if (name == "memtable") {
        c.memtable = true;
        return c;
    }
    if (name == "migration-4k" || name == "migration-2m") {
        const PageSize ps = name == "migration-4k" ? PageSize::Size4K : PageSize::Size2M;
        c.machine = preset_machine(ps);
        c.workloads = standard_workloads(ps, {{0, 0}}, 0, seed);
        for (Placement p : kAllPlacements)
            for (bool m : {false, true})
                c.scenarios.push_back({migration_scenario(p, ps, m), ""});
        c.baseline = c.scenarios.front().scenario.name;
        return c;
    }
    if (name == "multisocket-4k" || name == "multisocket-2m") {
        const PageSize ps = name == "multisocket-4k" ? PageSize::Size4K : PageSize::Size2M;
        c.machine = preset_machine(ps);
        std::vector<ThreadPlacement> threads;
        for (SocketId s = 0; s < c.machine.socket_count; ++s)
            threads.push_back({s, s});
        c.workloads = standard_workloads(ps, threads, 0, seed);
        for (auto& w : c.workloads)
            w.accesses /= 4;
        const SocketMask all = SocketMask::all(c.machine.socket_count);
        for (AllocPolicy p : {AllocPolicy::first_touch(), AllocPolicy::interleave()})
            for (bool m : {false, true})
                c.scenarios.push_back(
                    {multisocket_scenario(p, p, m ? std::optional<SocketMask>(all) : std::nullopt, ps), ""});
        c.baseline = c.scenarios.front().scenario.name;
        return c;
    }
    if (name == "fragmentation") {
        c.machine = preset_machine(PageSize::Size2M);
        c.workloads = standard_workloads(PageSize::Size2M, {{0, 0}}, 0, seed);
        c.scenarios.push_back({migration_scenario(Placement::LP_LD, PageSize::Size2M, false), ""});
        for (double p : {0.0, 0.5, 0.9, 1.0})
            for (bool m : {false, true}) {
                ScenarioConfig s = apply_fragmentation(migration_scenario(Placement::RPI_LD, PageSize::Size2M, m), p);
                char suffix[32];
                std::snprintf(suffix, sizeof suffix, "@%g", p);
                s.name += suffix;
                c.scenarios.push_back({s, ""});
            }
        c.baseline = c.scenarios.front().scenario.name;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "'");
}

// --- running ---

// Seed precedence: explicit flag, then PTSIM_SEED, then the config.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
    if (flag)
        return *flag;
    if (const char* env = std::getenv("PTSIM_SEED"); env && *env) {
        char* end = nullptr;
        const auto v = std::strtoull(env, &end, 10);
        if (*end != '\0')
            throw ConfigError("PTSIM_SEED must be an unsigned integer");
        return v;
    }
    return config_seed;
}

inline std::string dump_file_name(const std::string& workload, const std::string& scenario) {
    std::string out = workload + "-" + scenario;
    for (auto& ch : out)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '.' && ch != '+')
            ch = '_';
    return out + ".jsonl";
}

// Runs every (workload, scenario) pair in config order. Rows are normalized per workload
// against the baseline scenario when one is named.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& c) {
    validate(c);
    std::vector<ResultRow> rows;
    for (const auto& w : c.workloads) {
        WorkloadSpec workload = w;
        workload.seed = c.seed;
        const std::size_t first = rows.size();
        for (const auto& entry : c.scenarios) {
            if (!entry.workload.empty() && entry.workload != w.name)
                continue;
            SnapshotDump dump;
            ResultRow row;
            row.workload = w.name;
            row.scenario = entry.scenario.name;
            row.page_size = entry.scenario.page_size;
            row.mitosis = entry.scenario.mitosis_label();
            row.stats = run_scenario(c.machine, entry.scenario, workload, c.sim,
                                     c.output.dump_dir.empty() ? nullptr : &dump);
            if (!c.output.dump_dir.empty()) {
                std::filesystem::create_directories(c.output.dump_dir);
                std::ofstream out(std::filesystem::path(c.output.dump_dir) / dump_file_name(w.name, row.scenario));
                write_dump(out, dump);
            }
            rows.push_back(std::move(row));
        }
        if (!c.baseline.empty())
            for (std::size_t i = first; i < rows.size(); ++i)
                if (rows[i].scenario == c.baseline) {
                    const double base = static_cast<double>(rows[i].stats.total_cycles);
                    for (std::size_t k = first; k < rows.size(); ++k)
                        rows[k].normalized = base == 0 ? 0.0 : static_cast<double>(rows[k].stats.total_cycles) / base;
                    break;
                }
    }
    return rows;
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, SocketId sockets) {
    out << "workload,scenario,page_size,mitosis,total_cycles,walk_cycles,walk_fraction";
    for (SocketId s = 0; s < sockets; ++s)
        out << ",remote_leaf_pct_s" << s;
    out << ",pt_frames,overhead\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.workload << ',' << r.scenario << ',' << (r.page_size == PageSize::Size4K ? "4k" : "2m") << ','
            << r.mitosis << ',' << r.stats.total_cycles << ',' << r.stats.walk_cycles << ',';
        std::snprintf(buf, sizeof buf, "%.4f", r.stats.walk_fraction);
        out << buf;
        for (SocketId s = 0; s < sockets; ++s) {
            std::snprintf(buf, sizeof buf, ",%.2f", 100.0 * r.stats.remote_leaf_fraction.at(s));
            out << buf;
        }
        out << ',' << r.stats.pt_frames << ',';
        if (r.normalized) {
            std::snprintf(buf, sizeof buf, "%.3f", *r.normalized);
            out << buf;
        }
        out << '\n';
    }
}

} // namespace ptsim
