#include "fbsde/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace fbsde::kernels {

#if defined(FBSDE_WITH_AVX2)
const KernelTable& avx2_table(); // kernels_avx2.cpp
#endif

bool cpu_supports_avx2() {
#if defined(FBSDE_WITH_AVX2) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

namespace {

std::optional<Backend> g_forced;

Backend detect() {
    if (const char* env = std::getenv("FBSDE_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_supports_avx2()) return Backend::avx2;
    }
    return cpu_supports_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend select() {
    if (g_forced) return *g_forced;
    static const Backend detected = detect(); // environment read once
    return detected;
}

} // namespace

void force_backend(std::optional<Backend> b) { g_forced = b; }

Backend active_backend() {
    Backend b = select();
#if !defined(FBSDE_WITH_AVX2)
    b = Backend::scalar;
#endif
    return b;
}

const KernelTable& active() {
#if defined(FBSDE_WITH_AVX2)
    if (active_backend() == Backend::avx2) return avx2_table();
#endif
    return scalar_table();
}

} // namespace fbsde::kernels
