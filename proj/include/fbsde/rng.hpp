#pragma once

#include <cstdint>

namespace fbsde::rng {

// Counter-based pseudo-random stream: value k of a stream is a pure function
// of (seed, stream, k), so draws are reproducible and independent of how a
// batch is sliced across workers.
class Stream {
public:
    Stream(std::uint64_t seed, std::uint64_t stream);

    double uniform(std::uint64_t counter) const;     // open (0, 1)
    double normal(std::uint64_t counter) const;      // standard normal
    double uniform_in(std::uint64_t counter, double lo, double hi) const;

private:
    std::uint64_t key_;
};

std::uint64_t mix64(std::uint64_t x);

// Double-precision inverse of the standard normal CDF, |relative error|
// around 1e-15 over (0, 1).
double inverse_normal_cdf(double p);

// Standard normal CDF via erfc.
double normal_cdf(double x);

} // namespace fbsde::rng
