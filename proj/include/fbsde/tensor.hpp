#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fbsde/pool.hpp"

namespace fbsde {

// Dense row-major f64 tensor of rank 1..3. Rank 3 is reserved for path data
// (samples x time x features); everything the computation graph touches is
// rank 1 or 2. A scalar is a [1 x 1] tensor. Storage is recycled through a
// thread-local pool since training allocates and frees one large graph per
// iteration.
class Tensor {
public:
    using Data = std::vector<double, detail::PoolAllocator<double>>;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape); // zero-filled
    Tensor(std::initializer_list<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<double> data);
    Tensor(std::initializer_list<std::int64_t> shape, std::initializer_list<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, double v);
    static Tensor row(std::initializer_list<double> values); // [1 x n]

    int rank() const { return rank_; }
    std::vector<std::int64_t> shape() const;
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    // Rank-2 view helpers: rank-1 tensors count as a single row.
    std::int64_t rows() const { return rank_ == 1 ? 1 : shape_[0]; }
    std::int64_t cols() const { return shape_[static_cast<std::size_t>(rank_) - 1]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return {data_.data(), data_.size()}; }
    std::span<const double> values() const { return {data_.data(), data_.size()}; }

    double& operator()(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * cols() + j)]; }
    double operator()(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * cols() + j)]; }
    double& at3(std::int64_t i, std::int64_t j, std::int64_t k);
    double at3(std::int64_t i, std::int64_t j, std::int64_t k) const;

    double scalar_value() const; // requires numel() == 1

    bool same_shape(const Tensor& o) const { return rank_ == o.rank_ && shape_ == o.shape_; }
    bool all_finite() const;
    std::string shape_str() const; // e.g. "[2x3]"

    // For rank-3 path tensors: copy of time slice t as a [rows x features] matrix.
    Tensor time_slice(std::int64_t t) const;

private:
    void init_shape(std::span<const std::int64_t> shape);

    std::array<std::int64_t, 3> shape_{1, 1, 1};
    std::uint8_t rank_ = 0;
    Data data_;
};

// Tensor math used by the graph evaluator and the samplers. Binary ops
// broadcast over rank-2 shapes: equal shapes, scalar against anything,
// column [m x 1] against [m x f], and row [1 x f] against [m x f].
namespace tmath {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor max0(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sum_all(const Tensor& a);   // [1 x 1]
Tensor sum_rows(const Tensor& a);  // [m x f] -> [m x 1]
Tensor sum_cols(const Tensor& a);  // [m x f] -> [1 x f]

} // namespace tmath

} // namespace fbsde
