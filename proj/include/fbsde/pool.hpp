#pragma once

#include <cstddef>
#include <new>

namespace fbsde::detail {

// Size-binned, thread-local block cache. Training rebuilds a large graph
// every iteration; recycling the value buffers keeps the pages warm instead
// of bouncing them through the OS each time. Blocks are binned by the
// power-of-two ceiling of the request, so a (pointer, size) pair always
// lands back in the bin it came from.
void* pool_alloc(std::size_t bytes);
void pool_free(void* p, std::size_t bytes) noexcept;

template <class T>
struct PoolAllocator {
    using value_type = T;
    PoolAllocator() = default;
    template <class U>
    PoolAllocator(const PoolAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(pool_alloc(n * sizeof(T))); }
    void deallocate(T* p, std::size_t n) noexcept { pool_free(p, n * sizeof(T)); }
    template <class U>
    bool operator==(const PoolAllocator<U>&) const noexcept {
        return true;
    }
};

} // namespace fbsde::detail
