#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptsim/pte.hpp"
#include "ptsim/snapshot.hpp"

namespace ptsim {

// Per (level, socket) page counts and where the valid entries of those pages point.
struct LevelDistribution {
    SocketId sockets = 0;
    // Indexed [level - 1][socket].
    std::array<std::vector<std::uint64_t>, kLevels> node_count;
    // Indexed [level - 1][home socket][target socket].
    std::array<std::vector<std::vector<std::uint64_t>>, kLevels> pointers;

    explicit LevelDistribution(SocketId n = 0) : sockets(n) {
        for (int l = 0; l < kLevels; ++l) {
            node_count[l].assign(n, 0);
            pointers[l].assign(n, std::vector<std::uint64_t>(n, 0));
        }
    }

    std::uint64_t nodes(int level, SocketId s) const { return node_count[level - 1][s]; }
    const std::vector<std::uint64_t>& row(int level, SocketId s) const { return pointers[level - 1][s]; }

    std::uint64_t valid(int level, SocketId s) const {
        std::uint64_t sum = 0;
        for (auto c : row(level, s))
            sum += c;
        return sum;
    }

    double remote_pct(int level, SocketId s) const {
        const auto total = valid(level, s);
        return total == 0 ? 0.0 : static_cast<double>(total - row(level, s)[s]) / static_cast<double>(total);
    }
};

namespace detail {

inline std::vector<const DumpNode*> reachable_from(const SnapshotDump& dump, FrameNumber root) {
    std::unordered_map<FrameNumber, const DumpNode*> by_frame;
    for (const auto& n : dump.nodes)
        by_frame.emplace(n.frame, &n);
    std::vector<const DumpNode*> out;
    std::vector<FrameNumber> stack{root};
    while (!stack.empty()) {
        auto it = by_frame.find(stack.back());
        stack.pop_back();
        if (it == by_frame.end())
            continue;
        const DumpNode* n = it->second;
        out.push_back(n);
        if (n->level > 1)
            for (auto e = n->entries.rbegin(); e != n->entries.rend(); ++e)
                if (e->present && !e->huge)
                    stack.push_back(e->frame);
    }
    return out;
}

inline bool is_leaf(const DumpNode& n, const DumpEntry& e) { return e.present && (n.level == 1 || e.huge); }

} // namespace detail

// Distribution over the tree that replica_socket's walks use, or over every node in the dump
// when no socket is given (with full replication each socket's block is then its own replica).
inline LevelDistribution level_distribution(const SnapshotDump& dump,
                                            std::optional<SocketId> replica_socket = std::nullopt) {
    const SocketId n = dump.socket_count();
    LevelDistribution dist(n);
    std::vector<const DumpNode*> nodes;
    if (replica_socket) {
        if (*replica_socket >= n)
            throw std::out_of_range("replica socket not in dump");
        nodes = detail::reachable_from(dump, dump.roots[*replica_socket]);
    } else {
        for (const auto& node : dump.nodes)
            nodes.push_back(&node);
    }
    for (const DumpNode* node : nodes) {
        if (node->level < 1 || node->level > kLevels || node->socket >= n)
            throw std::invalid_argument("node outside the dump's socket or level range");
        ++dist.node_count[node->level - 1][node->socket];
        for (const auto& e : node->entries) {
            if (!e.present)
                continue;
            if (e.socket >= n)
                throw std::invalid_argument("entry targets a socket outside the dump");
            ++dist.pointers[node->level - 1][node->socket][e.socket];
        }
    }
    return dist;
}

// Fraction of leaf entries that a walk from observer reads from another socket.
inline double remote_leaf_view(const SnapshotDump& dump, SocketId observer) {
    if (observer >= dump.socket_count())
        throw std::out_of_range("observer socket not in dump");
    std::uint64_t leaves = 0;
    std::uint64_t remote = 0;
    for (const DumpNode* node : detail::reachable_from(dump, dump.roots[observer]))
        for (const auto& e : node->entries)
            if (detail::is_leaf(*node, e)) {
                ++leaves;
                remote += node->socket != observer;
            }
    return leaves == 0 ? 0.0 : static_cast<double>(remote) / static_cast<double>(leaves);
}

namespace detail {

inline std::size_t digits(std::uint64_t v) { return std::to_string(v).size(); }

inline std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

} // namespace detail

// Cell for one (level, socket): "count [t0 t1 ...] (pct%)". Counts and targets are padded
// to the widest value in the whole table so columns line up.
inline std::string render_cell(const LevelDistribution& d, int level, SocketId s, std::size_t count_width,
                               std::size_t target_width) {
    std::string out = detail::pad_left(std::to_string(d.nodes(level, s)), count_width) + " [";
    const auto& row = d.row(level, s);
    for (std::size_t t = 0; t < row.size(); ++t)
        out += (t ? " " : "") + detail::pad_left(std::to_string(row[t]), target_width);
    char pct[16];
    std::snprintf(pct, sizeof pct, "] (%2d%%)", static_cast<int>(std::lround(d.remote_pct(level, s) * 100.0)));
    return out + pct;
}

inline std::string render_matrix(const LevelDistribution& d) {
    std::size_t count_width = 1;
    std::size_t target_width = 1;
    for (int level = 1; level <= kLevels; ++level)
        for (SocketId s = 0; s < d.sockets; ++s) {
            count_width = std::max(count_width, detail::digits(d.nodes(level, s)));
            for (auto t : d.row(level, s))
                target_width = std::max(target_width, detail::digits(t));
        }

    std::vector<std::vector<std::string>> cells;
    std::size_t cell_width = 0;
    for (int level = kLevels; level >= 1; --level) {
        auto& row = cells.emplace_back();
        for (SocketId s = 0; s < d.sockets; ++s) {
            row.push_back(render_cell(d, level, s, count_width, target_width));
            cell_width = std::max(cell_width, row.back().size());
        }
    }

    std::ostringstream out;
    out << "    ";
    for (SocketId s = 0; s < d.sockets; ++s) {
        std::string head = "socket " + std::to_string(s);
        out << "  " << (s + 1 == d.sockets ? head : detail::pad_right(head, cell_width));
    }
    out << '\n';
    for (int level = kLevels; level >= 1; --level) {
        out << 'L' << level << "  ";
        const auto& row = cells[kLevels - level];
        for (SocketId s = 0; s < d.sockets; ++s)
            out << "  " << (s + 1 == d.sockets ? row[s] : detail::pad_right(row[s], cell_width));
        out << '\n';
    }
    return out.str();
}

inline void write_distribution_csv(std::ostream& out, const LevelDistribution& d) {
    out << "level,socket,node_count";
    for (SocketId t = 0; t < d.sockets; ++t)
        out << ",t" << t;
    out << ",remote_pct\n";
    for (int level = kLevels; level >= 1; --level)
        for (SocketId s = 0; s < d.sockets; ++s) {
            out << level << ',' << s << ',' << d.nodes(level, s);
            for (auto t : d.row(level, s))
                out << ',' << t;
            char pct[32];
            std::snprintf(pct, sizeof pct, ",%.4f\n", d.remote_pct(level, s));
            out << pct;
        }
}

} // namespace ptsim
