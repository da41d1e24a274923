#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptsim/errors.hpp"

namespace ptsim {

// Serialized page-table state as JSON lines:
//   {"kind":"roots","roots":[f0,f1,...]}
//   {"kind":"node","replica_socket":s,"level":L,"frame":f,"socket":σ,"entries":[...]}
// Entries list present slots only, in index order. Field order is fixed so the output is
// byte-stable.
struct DumpEntry {
    unsigned index = 0;
    FrameNumber frame = 0;
    SocketId socket = 0;
    bool present = true;
    bool writable = false;
    bool huge = false;
    bool accessed = false;
    bool dirty = false;

    friend bool operator==(const DumpEntry&, const DumpEntry&) = default;
};

struct DumpNode {
    SocketId replica_socket = 0;
    int level = 0;
    FrameNumber frame = 0;
    SocketId socket = 0;
    std::vector<DumpEntry> entries;

    friend bool operator==(const DumpNode&, const DumpNode&) = default;
};

struct SnapshotDump {
    std::vector<FrameNumber> roots; // indexed by socket
    std::vector<DumpNode> nodes;

    SocketId socket_count() const { return static_cast<SocketId>(roots.size()); }

    friend bool operator==(const SnapshotDump&, const SnapshotDump&) = default;
};

inline void write_dump(std::ostream& out, const SnapshotDump& dump) {
    out << "{\"kind\":\"roots\",\"roots\":[";
    for (std::size_t i = 0; i < dump.roots.size(); ++i)
        out << (i ? "," : "") << dump.roots[i];
    out << "]}\n";
    for (const auto& node : dump.nodes) {
        out << "{\"kind\":\"node\",\"replica_socket\":" << node.replica_socket << ",\"level\":" << node.level
            << ",\"frame\":" << node.frame << ",\"socket\":" << node.socket << ",\"entries\":[";
        for (std::size_t i = 0; i < node.entries.size(); ++i) {
            const auto& e = node.entries[i];
            out << (i ? "," : "") << "{\"i\":" << e.index << ",\"frame\":" << e.frame << ",\"socket\":" << e.socket
                << ",\"p\":" << int{e.present} << ",\"w\":" << int{e.writable} << ",\"h\":" << int{e.huge}
                << ",\"a\":" << int{e.accessed} << ",\"d\":" << int{e.dirty} << "}";
        }
        out << "]}\n";
    }
}

inline std::string dump_to_string(const SnapshotDump& dump) {
    std::ostringstream out;
    write_dump(out, dump);
    return out.str();
}

namespace detail {

template <typename T>
T dump_field(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw ParseError(line, std::string("missing field '") + key + "'");
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<std::int64_t>() >= 0))
        throw ParseError(line, std::string("field '") + key + "' is not a non-negative integer");
    return it->template get<T>();
}

inline bool dump_flag(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto v = dump_field<unsigned>(obj, key, line);
    if (v > 1)
        throw ParseError(line, std::string("flag '") + key + "' must be 0 or 1");
    return v == 1;
}

} // namespace detail

// Blank lines are skipped; line numbers in errors are 1-based physical lines.
inline SnapshotDump parse_dump(std::istream& in) {
    SnapshotDump dump;
    std::string text;
    std::size_t line = 0;
    bool have_roots = false;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object() || !obj.contains("kind") || !obj["kind"].is_string())
            throw ParseError(line, "expected an object with a string 'kind'");
        const auto kind = obj["kind"].get<std::string>();
        if (!have_roots) {
            if (kind != "roots")
                throw ParseError(line, "first record must be the roots line");
            if (!obj.contains("roots") || !obj["roots"].is_array() || obj["roots"].empty())
                throw ParseError(line, "roots must be a non-empty array");
            for (const auto& r : obj["roots"]) {
                if (!r.is_number_unsigned())
                    throw ParseError(line, "root frames must be non-negative integers");
                dump.roots.push_back(r.get<FrameNumber>());
            }
            have_roots = true;
            continue;
        }
        if (kind != "node")
            throw ParseError(line, "unknown record kind '" + kind + "'");
        DumpNode node;
        node.replica_socket = detail::dump_field<SocketId>(obj, "replica_socket", line);
        node.level = detail::dump_field<int>(obj, "level", line);
        if (node.level < 1 || node.level > 4)
            throw ParseError(line, "level must be 1..4");
        node.frame = detail::dump_field<FrameNumber>(obj, "frame", line);
        node.socket = detail::dump_field<SocketId>(obj, "socket", line);
        if (!obj.contains("entries") || !obj["entries"].is_array())
            throw ParseError(line, "missing entries array");
        for (const auto& e : obj["entries"]) {
            if (!e.is_object())
                throw ParseError(line, "entry must be an object");
            DumpEntry entry;
            entry.index = detail::dump_field<unsigned>(e, "i", line);
            if (entry.index >= 512)
                throw ParseError(line, "entry index out of range");
            entry.frame = detail::dump_field<FrameNumber>(e, "frame", line);
            entry.socket = detail::dump_field<SocketId>(e, "socket", line);
            entry.present = detail::dump_flag(e, "p", line);
            entry.writable = detail::dump_flag(e, "w", line);
            entry.huge = detail::dump_flag(e, "h", line);
            entry.accessed = detail::dump_flag(e, "a", line);
            entry.dirty = detail::dump_flag(e, "d", line);
            node.entries.push_back(entry);
        }
        dump.nodes.push_back(std::move(node));
    }
    if (!have_roots)
        throw ParseError(line == 0 ? 1 : line, "missing roots line");
    return dump;
}

inline SnapshotDump parse_dump(const std::string& text) {
    std::istringstream in(text);
    return parse_dump(in);
}

} // namespace ptsim
