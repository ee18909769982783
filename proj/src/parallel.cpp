#include "mbsde/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mbsde {

int default_workers() {
    if (const char* env = std::getenv("MBSDE_WORKERS")) {
        try {
            int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_blocks(std::size_t n, std::size_t block_size, int workers,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
    const std::size_t blocks = block_count(n, block_size);
    if (blocks == 0) return;
    const auto threads = static_cast<std::size_t>(std::clamp<long>(workers, 1, static_cast<long>(blocks)));
    if (threads == 1) {
        for (std::size_t b = 0; b < blocks; ++b)
            body(b, b * block_size, std::min(n, (b + 1) * block_size));
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= blocks) return;
            try {
                body(b, b * block_size, std::min(n, (b + 1) * block_size));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t path, std::uint64_t tag) {
    return splitmix64(splitmix64(splitmix64(master) ^ path) ^ (tag * 0xd6e8feb86659fd93ULL));
}

}  // namespace mbsde
