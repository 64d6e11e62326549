#include "fbsde/fbm.hpp"

#include <cmath>
#include <utility>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde::fbm {

Grid Grid::uniform(double t_end, int n_steps) {
    Grid g;
    g.t.resize(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i)
        g.t[static_cast<std::size_t>(i)] = t_end * static_cast<double>(i) / n_steps;
    g.t.back() = t_end;
    g.validate();
    return g;
}

void Grid::validate() const {
    if (t.size() < 2) throw ConfigError("grid needs at least one step");
    if (t.front() != 0.0) throw ConfigError("grid must start at t = 0");
    for (std::size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) throw ConfigError("grid times must be strictly increasing");
}

double phi(double s, double t, double hurst) {
    if (!(hurst > 0.5 && hurst < 1.0))
        throw ConfigError("phi requires Hurst in (1/2, 1), got " + std::to_string(hurst));
    if (s == t) throw NumericalError("phi(s, t) is singular on the diagonal s == t");
    return hurst * (2.0 * hurst - 1.0) * std::pow(std::fabs(s - t), 2.0 * hurst - 2.0);
}

Tensor covariance(const Grid& grid, double hurst) {
    grid.validate();
    if (!(hurst > 0.0 && hurst < 1.0))
        throw ConfigError("fBM covariance requires Hurst in (0, 1)");
    const int n = grid.n_steps();
    const double h2 = 2.0 * hurst;
    Tensor cov({n, n});
    for (int i = 0; i < n; ++i) {
        const double ti = grid.t[static_cast<std::size_t>(i) + 1];
        for (int j = 0; j <= i; ++j) {
            const double tj = grid.t[static_cast<std::size_t>(j) + 1];
            const double v =
                0.5 * (std::pow(ti, h2) + std::pow(tj, h2) - std::pow(std::fabs(ti - tj), h2));
            cov(i, j) = v;
            cov(j, i) = v;
        }
    }
    return cov;
}

Tensor cholesky(const Tensor& sym) {
    if (sym.rank() != 2 || sym.rows() != sym.cols())
        throw ShapeError("cholesky needs a square matrix, got " + sym.shape_str());
    const std::int64_t n = sym.rows();
    Tensor l({n, n});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
            double acc = sym(i, j);
            for (std::int64_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(acc > 0.0))
                    throw NumericalError(
                        "cholesky: matrix is not positive definite at pivot " + std::to_string(i) +
                        " (value " + std::to_string(acc) +
                        "); if this stems from rounding, add diagonal jitter explicitly");
                l(i, i) = std::sqrt(acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    return l;
}

Sampler::Sampler(Grid grid, double hurst, int components, std::uint64_t seed, std::uint64_t stream)
    : grid_(std::move(grid)), hurst_(hurst), components_(components), seed_(seed),
      stream_(stream) {
    grid_.validate();
    if (components_ < 1) throw ConfigError("sampler needs at least one component");
    cov_ = covariance(grid_, hurst_);
    chol_ = cholesky(cov_);
}

Tensor Sampler::sample_paths(std::int64_t paths, std::int64_t first_path) const {
    if (paths < 1) throw ConfigError("sample_paths needs at least one path");
    const int n = grid_.n_steps();
    const int d = components_;
    rng::Stream gauss(seed_, stream_);
    Tensor out({paths, n + 1, d});
    std::vector<double> z(static_cast<std::size_t>(n));
    for (std::int64_t p = 0; p < paths; ++p) {
        const std::uint64_t path_index = static_cast<std::uint64_t>(first_path + p);
        for (int c = 0; c < d; ++c) {
            const std::uint64_t base =
                (path_index * static_cast<std::uint64_t>(d) + static_cast<std::uint64_t>(c)) *
                static_cast<std::uint64_t>(n);
            for (int j = 0; j < n; ++j)
                z[static_cast<std::size_t>(j)] = gauss.normal(base + static_cast<std::uint64_t>(j));
            // Lower-triangular matvec: row j of chol against z.
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k <= j; ++k) acc += chol_(j, k) * z[static_cast<std::size_t>(k)];
                out.at3(p, j + 1, c) = acc;
            }
        }
    }
    return out;
}

Tensor increments(const Tensor& paths) {
    if (paths.rank() != 3) throw ShapeError("increments needs [m x (N+1) x d] paths");
    const std::int64_t m = paths.dim(0), steps = paths.dim(1) - 1, d = paths.dim(2);
    Tensor out({m, steps, d});
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t n = 0; n < steps; ++n)
            for (std::int64_t c = 0; c < d; ++c)
                out.at3(p, n, c) = paths.at3(p, n + 1, c) - paths.at3(p, n, c);
    return out;
}

} // namespace fbsde::fbm
