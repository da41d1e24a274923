// ptsim: run page-table placement experiments, analyze page-table dumps, print the
// replica memory-overhead table.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ptsim/ptsim.hpp"

namespace {

using namespace ptsim;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<SocketId> sockets;
    std::string pgtablerepl;
    std::string sys_policy;
    std::string page_size;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed", o.seed, "RNG seed (falls back to PTSIM_SEED, then the config)");
    cmd->add_option("--sockets", o.sockets, "override the machine's socket count");
    cmd->add_option("--pgtablerepl", o.pgtablerepl, "replicate page-tables on these sockets, e.g. 0-3 or all");
    cmd->add_option("--sys-policy", o.sys_policy, "off | per-process | fixed:<s> | all");
    cmd->add_option("--page-size", o.page_size, "4k | 2m for every scenario");
}

void apply(ExperimentConfig& c, const Overrides& o) {
    c.seed = resolve_seed(o.seed, c.seed);
    if (o.sockets)
        c.machine.socket_count = *o.sockets;
    if (!o.sys_policy.empty())
        c.sim.system_policy = SystemPolicy::parse(o.sys_policy);
    for (auto& e : c.scenarios) {
        if (!o.pgtablerepl.empty()) {
            e.scenario.mitosis = MitosisMode::Replicate;
            e.scenario.replicate_mask = o.pgtablerepl == "all" ? SocketMask::all(c.machine.socket_count)
                                                               : SocketMask::parse(o.pgtablerepl);
        }
        if (!o.page_size.empty())
            e.scenario.page_size = detail::parse_page_size(o.page_size);
    }
}

int emit(const ExperimentConfig& c, const std::string& csv_path) {
    if (c.memtable) {
        std::ofstream file;
        if (!csv_path.empty())
            file.open(csv_path);
        write_memtable(csv_path.empty() ? std::cout : file, c.memtable_footprints, c.memtable_replicas);
        return 0;
    }
    const auto rows = run_experiment(c);
    if (csv_path.empty()) {
        write_results_csv(std::cout, rows, c.machine.socket_count);
    } else {
        std::ofstream out(csv_path);
        if (!out)
            throw ConfigError("cannot write '" + csv_path + "'");
        write_results_csv(out, rows, c.machine.socket_count);
        std::cerr << "wrote " << rows.size() << " rows to " << csv_path << '\n';
    }
    return 0;
}

std::vector<std::uint64_t> parse_list(const std::string& text, bool sizes) {
    std::vector<std::uint64_t> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty())
            out.push_back(sizes ? parse_size(item) : std::stoull(item));
    if (out.empty())
        throw ConfigError("empty list '" + text + "'");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"NUMA page-table placement and replication simulator"};
    app.require_subcommand(1);

    Overrides run_opts;
    std::string config_path;
    std::string run_out;
    auto* run = app.add_subcommand("run", "run the scenarios of an experiment config");
    run->add_option("config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
    run->add_option("--out", run_out, "CSV output file (default: config output.csv, else stdout)");
    add_overrides(run, run_opts);

    Overrides preset_opts;
    std::string preset_name;
    std::string preset_dir;
    auto* pre = app.add_subcommand("preset", "run a built-in experiment");
    pre->add_option("name", preset_name, "migration-4k | migration-2m | multisocket-4k | multisocket-2m | "
                                         "fragmentation | memtable")
        ->required();
    pre->add_option("--out", preset_dir, "directory for <name>.csv (default: stdout)");
    add_overrides(pre, preset_opts);

    std::string dump_path;
    std::optional<SocketId> observer;
    std::optional<SocketId> replica;
    bool as_csv = false;
    bool as_matrix = false;
    auto* analyze = app.add_subcommand("analyze", "summarize a page-table dump");
    analyze->add_option("dump", dump_path, "JSON-lines dump")->required()->check(CLI::ExistingFile);
    analyze->add_option("--observer", observer, "report only the remote-leaf share seen from this socket");
    analyze->add_option("--replica", replica, "restrict to the tree this socket walks (default: all nodes)");
    auto* matrix_flag = analyze->add_flag("--matrix", as_matrix, "text matrix only");
    analyze->add_flag("--csv", as_csv, "CSV instead of the text matrix")->excludes(matrix_flag);

    std::string footprints = "1MB,1GB,1TB,16TB";
    std::string replicas = "1,2,4,8,16";
    auto* memtable = app.add_subcommand("memtable", "memory overhead of page-table replicas");
    memtable->add_option("--footprints", footprints, "comma-separated sizes")->capture_default_str();
    memtable->add_option("--replicas", replicas, "comma-separated replica counts")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            ExperimentConfig c = load_config(config_path);
            apply(c, run_opts);
            return emit(c, run_out.empty() ? c.output.csv : run_out);
        }
        if (*pre) {
            ExperimentConfig c = preset(preset_name);
            apply(c, preset_opts);
            std::string csv;
            if (!preset_dir.empty()) {
                std::filesystem::create_directories(preset_dir);
                csv = (std::filesystem::path(preset_dir) / (preset_name + ".csv")).string();
            }
            return emit(c, csv);
        }
        if (*analyze) {
            std::ifstream in(dump_path);
            const SnapshotDump dump = parse_dump(in);
            if (observer) {
                std::printf("%.2f\n", 100.0 * remote_leaf_view(dump, *observer));
                return 0;
            }
            const LevelDistribution d = level_distribution(dump, replica);
            if (as_csv) {
                write_distribution_csv(std::cout, d);
                return 0;
            }
            std::cout << render_matrix(d);
            if (as_matrix)
                return 0;
            for (SocketId s = 0; s < dump.socket_count(); ++s)
                std::printf("remote leaf PTEs seen from socket %u: %.2f%%\n", s, 100.0 * remote_leaf_view(dump, s));
            return 0;
        }
        if (*memtable) {
            write_memtable(std::cout, parse_list(footprints, true), parse_list(replicas, false));
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << "ptsim: " << dump_path << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ptsim: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
