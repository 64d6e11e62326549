#include "fbsde/pool.hpp"

#include <cstdint>
#include <vector>

namespace fbsde::detail {

namespace {

constexpr std::size_t kMinBin = 64;
constexpr std::size_t kMaxBin = std::size_t(1) << 22; // 4 MB; larger goes to new/delete
constexpr std::size_t kCacheCap = std::size_t(768) << 20;

int bin_of(std::size_t bytes) {
    std::size_t b = kMinBin;
    int idx = 0;
    while (b < bytes) {
        b <<= 1;
        ++idx;
    }
    return idx;
}

std::size_t bin_bytes(int idx) { return kMinBin << idx; }

struct Cache {
    std::vector<void*> bins[17]; // 64 B .. 4 MB
    std::size_t cached_bytes = 0;

    ~Cache() {
        for (auto& bin : bins)
            for (void* p : bin) ::operator delete(p);
    }
};

Cache& cache() {
    thread_local Cache c;
    return c;
}

} // namespace

void* pool_alloc(std::size_t bytes) {
    if (bytes == 0) bytes = 1;
    if (bytes > kMaxBin) return ::operator new(bytes);
    const int idx = bin_of(bytes);
    Cache& c = cache();
    auto& bin = c.bins[idx];
    if (!bin.empty()) {
        void* p = bin.back();
        bin.pop_back();
        c.cached_bytes -= bin_bytes(idx);
        return p;
    }
    return ::operator new(bin_bytes(idx));
}

void pool_free(void* p, std::size_t bytes) noexcept {
    if (p == nullptr) return;
    if (bytes == 0) bytes = 1;
    if (bytes > kMaxBin) {
        ::operator delete(p);
        return;
    }
    const int idx = bin_of(bytes);
    Cache& c = cache();
    if (c.cached_bytes + bin_bytes(idx) > kCacheCap) {
        ::operator delete(p);
        return;
    }
    c.bins[idx].push_back(p);
    c.cached_bytes += bin_bytes(idx);
}

} // namespace fbsde::detail
