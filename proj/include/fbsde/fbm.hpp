#pragma once

#include <cstdint>
#include <vector>

#include "fbsde/tensor.hpp"

namespace fbsde::fbm {

// Time grid 0 = t_0 < t_1 < ... < t_N = T.
struct Grid {
    std::vector<double> t;

    static Grid uniform(double t_end, int n_steps);

    int n_steps() const { return static_cast<int>(t.size()) - 1; }
    double t_end() const { return t.back(); }
    double dt(int n) const { return t[static_cast<std::size_t>(n) + 1] - t[static_cast<std::size_t>(n)]; }
    void validate() const; // t_0 == 0, strictly increasing, N >= 1
};

// Covariance density of fractional Brownian motion with Hurst index H:
// phi(s, t) = H (2H - 1) |s - t|^(2H - 2). Defined for H in (1/2, 1) and
// s != t (the kernel diverges on the diagonal).
double phi(double s, double t, double hurst);

// Grid covariance Cov(B_s, B_t) = (s^2H + t^2H - |s - t|^2H) / 2 over the
// open grid points t_1..t_N. Valid for H in (0, 1); equals the double
// integral of phi over [0, s] x [0, t], which the tests enforce by
// quadrature rather than trust.
Tensor covariance(const Grid& grid, double hurst);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NumericalError when a pivot is not strictly positive.
Tensor cholesky(const Tensor& sym);

// Exact sampler for d independent fBM components on a fixed grid. Immutable
// after construction; disjoint batches may be drawn concurrently using
// non-overlapping path offsets.
class Sampler {
public:
    Sampler(Grid grid, double hurst, int components, std::uint64_t seed,
            std::uint64_t stream = 0);

    const Grid& grid() const { return grid_; }
    double hurst() const { return hurst_; }
    int components() const { return components_; }
    const Tensor& chol() const { return chol_; }
    const Tensor& cov() const { return cov_; }

    // Paths as a [paths x (N+1) x d] tensor; column 0 is exactly zero.
    // first_path is the absolute index of the first path in the stream.
    Tensor sample_paths(std::int64_t paths, std::int64_t first_path = 0) const;

private:
    Grid grid_;
    double hurst_;
    int components_;
    std::uint64_t seed_, stream_;
    Tensor cov_;
    Tensor chol_;
};

// Per-step increments dB[m, n, c] = B[m, n+1, c] - B[m, n, c].
Tensor increments(const Tensor& paths);

} // namespace fbsde::fbm
