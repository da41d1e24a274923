#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptsim/machine.hpp"

namespace ptsim {

struct MemOverhead {
    std::uint64_t pt_bytes = 0;
    double ratio = 1.0;
};

// Page-table size of a compact address space 0..footprint with 4-level paging, and total
// memory with `replicas` page-tables relative to one.
inline MemOverhead mem_overhead(std::uint64_t footprint_bytes, std::uint64_t replicas) {
    if (footprint_bytes == 0)
        throw std::invalid_argument("footprint must be at least one byte");
    if (replicas == 0)
        throw std::invalid_argument("replicas must be at least one");
    auto pages_for = [&](std::uint64_t span) {
        return std::max<std::uint64_t>(1, (footprint_bytes + span - 1) / span);
    };
    const std::uint64_t pt_pages = 1 + pages_for(std::uint64_t{512} << 30) + pages_for(std::uint64_t{1} << 30) +
                                   pages_for(std::uint64_t{2} << 20);
    MemOverhead out;
    out.pt_bytes = pt_pages * kPageSize;
    const double f = static_cast<double>(footprint_bytes);
    const double pt = static_cast<double>(out.pt_bytes);
    out.ratio = (f + static_cast<double>(replicas) * pt) / (f + pt);
    return out;
}

// Sizes as printed in the overhead table: binary units, sub-unit values with two rounded
// decimals, otherwise three significant digits truncated ("0.02MB", "2.01MB", "32.0GB").
inline std::string format_size(std::uint64_t bytes) {
    static const char* const units[] = {"KB", "MB", "GB", "TB", "PB"};
    double v = static_cast<double>(bytes) / 1024.0;
    int unit = 0;
    while (v >= 1024.0 && unit < 4) {
        v /= 1024.0;
        ++unit;
    }
    if (unit == 0 && bytes < (std::uint64_t{1} << 20)) {
        // Below a megabyte the table still reports megabytes.
        v /= 1024.0;
        unit = 1;
    }
    char buf[32];
    if (v < 1.0) {
        std::snprintf(buf, sizeof buf, "%.2f%s", v, units[unit]);
    } else {
        const int int_digits = v < 10 ? 1 : v < 100 ? 2 : 3;
        const int decimals = 3 - int_digits;
        const double scale = std::pow(10.0, decimals);
        const double truncated = std::floor(v * scale + 1e-9) / scale;
        std::snprintf(buf, sizeof buf, "%.*f%s", decimals, truncated, units[unit]);
    }
    return buf;
}

inline std::string format_ratio(double ratio) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", ratio);
    return buf;
}

inline std::string footprint_label(std::uint64_t bytes) {
    static const char* const units[] = {"B", "KB", "MB", "GB", "TB", "PB"};
    int unit = 0;
    while (bytes >= 1024 && bytes % 1024 == 0 && unit < 5) {
        bytes /= 1024;
        ++unit;
    }
    return std::to_string(bytes) + units[unit];
}

// "1MB", "16TB", "4096" (bytes) ...
inline std::uint64_t parse_size(const std::string& text) {
    std::size_t pos = 0;
    std::uint64_t value = 0;
    try {
        value = std::stoull(text, &pos);
    } catch (const std::exception&) {
        throw ConfigError("bad size '" + text + "'");
    }
    std::string suffix = text.substr(pos);
    for (auto& c : suffix)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (!suffix.empty() && suffix.back() == 'B')
        suffix.pop_back();
    if (!suffix.empty() && suffix.back() == 'I') // KiB, MiB ...
        suffix.pop_back();
    static const std::string prefixes = "KMGTP";
    if (suffix.empty())
        return value;
    const auto at = prefixes.find(suffix);
    if (suffix.size() != 1 || at == std::string::npos)
        throw ConfigError("bad size '" + text + "'");
    const unsigned shift = 10 * static_cast<unsigned>(at + 1);
    if (value > (~std::uint64_t{0} >> shift))
        throw ConfigError("size '" + text + "' overflows");
    return value << shift;
}

inline const std::vector<std::uint64_t>& default_memtable_footprints() {
    static const std::vector<std::uint64_t> v = {std::uint64_t{1} << 20, std::uint64_t{1} << 30,
                                                 std::uint64_t{1} << 40, std::uint64_t{16} << 40};
    return v;
}

inline const std::vector<std::uint64_t>& default_memtable_replicas() {
    static const std::vector<std::uint64_t> v = {1, 2, 4, 8, 16};
    return v;
}

inline void write_memtable(std::ostream& out, const std::vector<std::uint64_t>& footprints,
                           const std::vector<std::uint64_t>& replicas) {
    out << "footprint,pt_size";
    for (auto r : replicas)
        out << ",r" << r;
    out << '\n';
    for (auto f : footprints) {
        out << footprint_label(f) << ',' << format_size(mem_overhead(f, 1).pt_bytes);
        for (auto r : replicas)
            out << ',' << format_ratio(mem_overhead(f, r).ratio);
        out << '\n';
    }
}

} // namespace ptsim
