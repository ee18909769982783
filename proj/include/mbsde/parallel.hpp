#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace mbsde {

/// Worker count from MBSDE_WORKERS (default: hardware concurrency, at least 1).
[[nodiscard]] int default_workers();

/// Runs body(begin, end) over [0, n) split into fixed-size blocks. Block
/// boundaries depend only on n and block_size, never on the worker count, so
/// per-block partial results merged in block order are reproducible.
void parallel_blocks(std::size_t n, std::size_t block_size, int workers,
                     const std::function<void(std::size_t block, std::size_t begin,
                                              std::size_t end)>& body);

[[nodiscard]] inline std::size_t block_count(std::size_t n, std::size_t block_size) {
    return (n + block_size - 1) / block_size;
}

/// Seed for an independent per-path stream: a pure function of
/// (master seed, path index, stream tag).
[[nodiscard]] std::uint64_t stream_seed(std::uint64_t master, std::uint64_t path,
                                        std::uint64_t tag = 0);

}  // namespace mbsde
