#pragma once

#include <cstddef>
#include <optional>

namespace fbsde::kernels {

// Flat f64 kernels behind the tensor layer. Every entry has a scalar
// reference implementation; on x86-64 an AVX2 variant is selected at runtime
// when the CPU supports it. The two backends are equivalence-tested: the
// lane-wise kernels must agree bitwise, the accumulating ones (dot, sum,
// matmul) to a small relative tolerance since their summation order differs.
struct KernelTable {
    void (*vadd)(const double* a, const double* b, double* out, std::size_t n);
    void (*vsub)(const double* a, const double* b, double* out, std::size_t n);
    void (*vmul)(const double* a, const double* b, double* out, std::size_t n);
    void (*vdiv)(const double* a, const double* b, double* out, std::size_t n);
    void (*vneg)(const double* a, double* out, std::size_t n);
    void (*vmax0)(const double* a, double* out, std::size_t n);
    void (*vshift)(const double* a, double c, double* out, std::size_t n); // out = a + c
    void (*vscale)(const double* a, double c, double* out, std::size_t n); // out = a * c
    void (*axpy)(double a, const double* x, double* y, std::size_t n);     // y += a * x
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    // C[m x n] = A[m x k] * B[k x n], row-major, C overwritten.
    void (*matmul)(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
};

enum class Backend { scalar, avx2 };

const KernelTable& scalar_table();

// Currently active table. Selection order: forced backend if set, else the
// FBSDE_KERNELS environment variable ("scalar" or "avx2"), else CPU detect.
const KernelTable& active();
Backend active_backend();

// Test hook; pass nullopt to restore auto-detection.
void force_backend(std::optional<Backend> b);

bool cpu_supports_avx2();

} // namespace fbsde::kernels
