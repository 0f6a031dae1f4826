#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ftnet {

// Base class for all structured errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

class BudgetError : public Error {
public:
    BudgetError(const std::string& msg, std::uint64_t count)
        : Error(msg), query_count(count) {}
    std::uint64_t query_count;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based seed derivation: one global seed fans out into independent
// per-module, per-index streams. Adding a stage never perturbs the streams
// of earlier stages.
inline std::uint64_t derive_seed(std::uint64_t root, const std::string& tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = root;
    for (char c : tag) h = splitmix64(h ^ static_cast<unsigned char>(c));
    return splitmix64(h ^ (index * 0x100000001b3ULL));
}

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so the
// result order (and anything indexed by i) is independent of the thread count.
inline void parallel_for(std::size_t n, int jobs,
                         const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace ftnet
