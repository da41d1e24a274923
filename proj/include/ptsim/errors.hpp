#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ptsim {

using SocketId = std::uint32_t;
using FrameNumber = std::uint64_t;
using Cycles = std::uint64_t;

// Strict allocation on a socket could not be satisfied.
class OutOfMemory : public std::runtime_error {
public:
    explicit OutOfMemory(SocketId socket)
        : std::runtime_error("out of memory on socket " + std::to_string(socket)), socket_(socket) {}

    SocketId socket() const noexcept { return socket_; }

private:
    SocketId socket_;
};

class DoubleFree : public std::logic_error {
public:
    explicit DoubleFree(FrameNumber frame)
        : std::logic_error("frame " + std::to_string(frame) + " is already free"), frame_(frame) {}

    FrameNumber frame() const noexcept { return frame_; }

private:
    FrameNumber frame_;
};

// A walk hit a non-present entry. level is the table level (4 = root) holding that entry.
class PageFault : public std::runtime_error {
public:
    PageFault(int level, std::uint64_t vaddr)
        : std::runtime_error("page fault at level " + std::to_string(level) + " for vaddr " +
                             std::to_string(vaddr)),
          level_(level), vaddr_(vaddr) {}

    int level() const noexcept { return level_; }
    std::uint64_t vaddr() const noexcept { return vaddr_; }

private:
    int level_;
    std::uint64_t vaddr_;
};

class AlreadyMapped : public std::runtime_error {
public:
    explicit AlreadyMapped(std::uint64_t vaddr)
        : std::runtime_error("address " + std::to_string(vaddr) + " is already mapped"), vaddr_(vaddr) {}

    std::uint64_t vaddr() const noexcept { return vaddr_; }

private:
    std::uint64_t vaddr_;
};

class NotMapped : public std::runtime_error {
public:
    explicit NotMapped(std::uint64_t vaddr)
        : std::runtime_error("address " + std::to_string(vaddr) + " is not mapped"), vaddr_(vaddr) {}

    std::uint64_t vaddr() const noexcept { return vaddr_; }

private:
    std::uint64_t vaddr_;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Invalid or inconsistent configuration (machine, workload, scenario, preset names).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace ptsim
