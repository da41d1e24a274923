#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ptsim/errors.hpp"

namespace ptsim {

inline constexpr SocketId kMaxSockets = 64;

// Set of sockets, iterated in ascending order.
class SocketMask {
public:
    constexpr SocketMask() = default;
    constexpr explicit SocketMask(std::uint64_t bits) : bits_(bits) {}

    SocketMask(std::initializer_list<SocketId> sockets) {
        for (SocketId s : sockets)
            set(s);
    }

    static constexpr SocketMask single(SocketId s) { return SocketMask(std::uint64_t{1} << s); }

    static constexpr SocketMask all(SocketId count) {
        return SocketMask(count >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << count) - 1);
    }

    constexpr bool contains(SocketId s) const { return s < 64 && ((bits_ >> s) & 1U) != 0; }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }
    constexpr std::uint64_t bits() const { return bits_; }

    constexpr SocketMask& set(SocketId s) {
        if (s >= kMaxSockets)
            throw ConfigError("socket id " + std::to_string(s) + " exceeds the supported maximum");
        bits_ |= std::uint64_t{1} << s;
        return *this;
    }
    constexpr SocketMask& reset(SocketId s) {
        if (s < kMaxSockets)
            bits_ &= ~(std::uint64_t{1} << s);
        return *this;
    }

    // Lowest socket in the set; undefined for an empty mask.
    constexpr SocketId first() const { return static_cast<SocketId>(std::countr_zero(bits_)); }

    constexpr bool subset_of(SocketMask other) const { return (bits_ & ~other.bits_) == 0; }

    std::vector<SocketId> sockets() const {
        std::vector<SocketId> out;
        for (std::uint64_t b = bits_; b != 0; b &= b - 1)
            out.push_back(static_cast<SocketId>(std::countr_zero(b)));
        return out;
    }

    friend constexpr SocketMask operator|(SocketMask a, SocketMask b) { return SocketMask(a.bits_ | b.bits_); }
    friend constexpr SocketMask operator&(SocketMask a, SocketMask b) { return SocketMask(a.bits_ & b.bits_); }
    friend constexpr bool operator==(SocketMask a, SocketMask b) = default;

    // numactl-style list: "0,2-3"
    std::string to_string() const {
        std::string out;
        auto list = sockets();
        for (std::size_t i = 0; i < list.size();) {
            std::size_t j = i;
            while (j + 1 < list.size() && list[j + 1] == list[j] + 1)
                ++j;
            if (!out.empty())
                out += ',';
            out += std::to_string(list[i]);
            if (j > i)
                out += '-' + std::to_string(list[j]);
            i = j + 1;
        }
        return out;
    }

    static SocketMask parse(std::string_view text) {
        const std::string whole(text);
        SocketMask mask;
        auto parse_num = [&](std::string_view tok) -> SocketId {
            if (tok.empty())
                throw ConfigError("empty socket id in list '" + whole + "'");
            SocketId v = 0;
            for (char c : tok) {
                if (c < '0' || c > '9')
                    throw ConfigError("bad socket id '" + std::string(tok) + "'");
                v = v * 10 + static_cast<SocketId>(c - '0');
                if (v >= kMaxSockets)
                    throw ConfigError("socket id '" + std::string(tok) + "' out of range");
            }
            return v;
        };
        while (!text.empty()) {
            auto comma = text.find(',');
            auto tok = text.substr(0, comma);
            auto dash = tok.find('-');
            if (dash == std::string_view::npos) {
                mask.set(parse_num(tok));
            } else {
                SocketId lo = parse_num(tok.substr(0, dash));
                SocketId hi = parse_num(tok.substr(dash + 1));
                if (hi < lo)
                    throw ConfigError("descending socket range '" + std::string(tok) + "'");
                for (SocketId s = lo; s <= hi; ++s)
                    mask.set(s);
            }
            if (comma == std::string_view::npos)
                break;
            text.remove_prefix(comma + 1);
        }
        if (mask.empty())
            throw ConfigError("empty socket list");
        return mask;
    }

private:
    std::uint64_t bits_ = 0;
};

} // namespace ptsim
