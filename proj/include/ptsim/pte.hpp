#pragma once

#include <array>
#include <cstdint>

#include "ptsim/errors.hpp"

namespace ptsim {

inline constexpr unsigned kEntriesPerTable = 512;
inline constexpr int kLevels = 4;
inline constexpr std::uint64_t kHugePageSize = std::uint64_t{2} << 20;
inline constexpr std::uint64_t kVirtualLimit = std::uint64_t{1} << 47; // lower canonical half

enum class PageSize : std::uint8_t { Size4K, Size2M };

constexpr std::uint64_t page_bytes(PageSize size) {
    return size == PageSize::Size4K ? std::uint64_t{4096} : kHugePageSize;
}

// Bit offset of the index field for a table at level (4 = root).
constexpr unsigned level_shift(int level) { return 12 + 9 * static_cast<unsigned>(level - 1); }

constexpr unsigned table_index(std::uint64_t vaddr, int level) {
    return static_cast<unsigned>((vaddr >> level_shift(level)) & (kEntriesPerTable - 1));
}

// Bytes of virtual address space covered by one entry of a table at level.
constexpr std::uint64_t entry_span(int level) { return std::uint64_t{1} << level_shift(level); }

// x86-64 style page-table entry: P(0) RW(1) A(5) D(6) PS(7), frame number in bits 12..51.
class Pte {
public:
    constexpr Pte() = default;
    constexpr explicit Pte(std::uint64_t raw) : raw_(raw) {}

    static constexpr Pte table(FrameNumber child) { return Pte((child << 12) | kPresent | kWritable); }

    static constexpr Pte leaf(FrameNumber frame, bool writable, bool huge = false) {
        return Pte((frame << 12) | kPresent | (writable ? kWritable : 0) | (huge ? kHuge : 0));
    }

    constexpr std::uint64_t raw() const { return raw_; }
    constexpr bool present() const { return (raw_ & kPresent) != 0; }
    constexpr bool writable() const { return (raw_ & kWritable) != 0; }
    constexpr bool huge() const { return (raw_ & kHuge) != 0; }
    constexpr bool accessed() const { return (raw_ & kAccessed) != 0; }
    constexpr bool dirty() const { return (raw_ & kDirty) != 0; }
    constexpr FrameNumber frame() const { return (raw_ & kFrameMask) >> 12; }

    constexpr Pte with_frame(FrameNumber f) const { return Pte((raw_ & ~kFrameMask) | (f << 12)); }
    constexpr Pte with_writable(bool w) const { return Pte(w ? raw_ | kWritable : raw_ & ~kWritable); }
    constexpr Pte with_accessed(bool a) const { return Pte(a ? raw_ | kAccessed : raw_ & ~(kAccessed | kDirty)); }
    // Setting dirty also sets accessed.
    constexpr Pte with_dirty(bool d) const { return Pte(d ? raw_ | kDirty | kAccessed : raw_ & ~kDirty); }
    constexpr Pte without_ad() const { return Pte(raw_ & ~(kAccessed | kDirty)); }
    constexpr std::uint64_t ad_bits() const { return raw_ & (kAccessed | kDirty); }
    constexpr Pte with_ad_bits(std::uint64_t bits) const { return Pte(raw_ | (bits & (kAccessed | kDirty))); }

    friend constexpr bool operator==(Pte, Pte) = default;

    static constexpr std::uint64_t kPresent = 1ULL << 0;
    static constexpr std::uint64_t kWritable = 1ULL << 1;
    static constexpr std::uint64_t kAccessed = 1ULL << 5;
    static constexpr std::uint64_t kDirty = 1ULL << 6;
    static constexpr std::uint64_t kHuge = 1ULL << 7;
    static constexpr std::uint64_t kFrameMask = 0x000F'FFFF'FFFF'F000ULL;

private:
    std::uint64_t raw_ = 0;
};

struct PageTableNode {
    int level = 0;
    FrameNumber frame = 0;
    SocketId socket = 0;
    // Socket label of the replica tree this node belongs to.
    SocketId replica = 0;
    FrameNumber ring_next = 0;
    unsigned present_count = 0;
    std::array<Pte, kEntriesPerTable> entries{};
};

} // namespace ptsim
