#include "fbsde/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "fbsde/errors.hpp"
#include "fbsde/kernels.hpp"

namespace fbsde {

void Tensor::init_shape(std::span<const std::int64_t> shape) {
    if (shape.empty() || shape.size() > 3)
        throw ShapeError("tensor rank must be 1..3, got rank " + std::to_string(shape.size()));
    std::int64_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] < 1) throw ShapeError("tensor extents must be positive");
        shape_[i] = shape[i];
        n *= shape[i];
    }
    rank_ = static_cast<std::uint8_t>(shape.size());
    data_.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape) { init_shape(shape); }
Tensor::Tensor(std::initializer_list<std::int64_t> shape) {
    init_shape({shape.begin(), shape.size()});
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data) {
    init_shape(shape);
    if (numel() != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str());
    std::copy(data.begin(), data.end(), data_.begin());
}

Tensor::Tensor(std::initializer_list<std::int64_t> shape, std::initializer_list<double> data) {
    init_shape({shape.begin(), shape.size()});
    if (numel() != static_cast<std::int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str());
    std::copy(data.begin(), data.end(), data_.begin());
}

std::vector<std::int64_t> Tensor::shape() const {
    return std::vector<std::int64_t>(shape_.begin(), shape_.begin() + rank_);
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }
Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
    Tensor t({1, static_cast<std::int64_t>(values.size())});
    std::copy(values.begin(), values.end(), t.data_.begin());
    return t;
}

double& Tensor::at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

double Tensor::at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
}

double Tensor::scalar_value() const {
    if (numel() != 1) throw ShapeError("scalar_value on tensor of shape " + shape_str());
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[static_cast<std::size_t>(i)]);
    }
    return s + "]";
}

Tensor Tensor::time_slice(std::int64_t t) const {
    if (rank() != 3) throw ShapeError("time_slice requires a rank-3 tensor, got " + shape_str());
    if (t < 0 || t >= shape_[1]) throw ShapeError("time index out of range");
    Tensor out({shape_[0], shape_[2]});
    for (std::int64_t i = 0; i < shape_[0]; ++i)
        for (std::int64_t k = 0; k < shape_[2]; ++k) out(i, k) = at3(i, t, k);
    return out;
}

namespace tmath {

namespace {

using BinKernel = void (*)(const double*, const double*, double*, std::size_t);

// Broadcast plan for rank<=2 binary ops.
enum class Bc { same, a_scalar, b_scalar, a_col, b_col, a_row, b_row };

Bc plan(const Tensor& a, const Tensor& b) {
    if (a.rank() > 2 || b.rank() > 2)
        throw ShapeError("elementwise ops take rank<=2 tensors, got " + a.shape_str() + " and " +
                         b.shape_str());
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Bc::same;
    if (a.numel() == 1) return Bc::a_scalar;
    if (b.numel() == 1) return Bc::b_scalar;
    if (a.rows() == b.rows() && a.cols() == 1) return Bc::a_col;
    if (a.rows() == b.rows() && b.cols() == 1) return Bc::b_col;
    if (a.rows() == 1 && a.cols() == b.cols()) return Bc::a_row;
    if (b.rows() == 1 && a.cols() == b.cols()) return Bc::b_row;
    throw ShapeError("shapes " + a.shape_str() + " and " + b.shape_str() +
                     " are not broadcast-compatible");
}

template <typename ScalarOp>
Tensor binary(const Tensor& a, const Tensor& b, BinKernel kern, ScalarOp op) {
    switch (plan(a, b)) {
    case Bc::same: {
        Tensor out({a.rows(), a.cols()});
        kern(a.data(), b.data(), out.data(), static_cast<std::size_t>(a.numel()));
        return out;
    }
    case Bc::a_scalar: {
        Tensor out({b.rows(), b.cols()});
        const double av = a.data()[0];
        const double* bp = b.data();
        double* o = out.data();
        for (std::int64_t i = 0; i < b.numel(); ++i) o[i] = op(av, bp[i]);
        return out;
    }
    case Bc::b_scalar: {
        Tensor out({a.rows(), a.cols()});
        const double bv = b.data()[0];
        const double* ap = a.data();
        double* o = out.data();
        for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = op(ap[i], bv);
        return out;
    }
    case Bc::a_col: { // a is [m x 1]
        Tensor out({b.rows(), b.cols()});
        const std::int64_t f = b.cols();
        for (std::int64_t i = 0; i < b.rows(); ++i) {
            const double av = a.data()[i];
            const double* bp = b.data() + i * f;
            double* o = out.data() + i * f;
            for (std::int64_t j = 0; j < f; ++j) o[j] = op(av, bp[j]);
        }
        return out;
    }
    case Bc::b_col: { // b is [m x 1]
        Tensor out({a.rows(), a.cols()});
        const std::int64_t f = a.cols();
        for (std::int64_t i = 0; i < a.rows(); ++i) {
            const double bv = b.data()[i];
            const double* ap = a.data() + i * f;
            double* o = out.data() + i * f;
            for (std::int64_t j = 0; j < f; ++j) o[j] = op(ap[j], bv);
        }
        return out;
    }
    case Bc::a_row: { // a is [1 x f]
        Tensor out({b.rows(), b.cols()});
        const std::int64_t f = b.cols();
        for (std::int64_t i = 0; i < b.rows(); ++i) {
            const double* bp = b.data() + i * f;
            double* o = out.data() + i * f;
            for (std::int64_t j = 0; j < f; ++j) o[j] = op(a.data()[j], bp[j]);
        }
        return out;
    }
    case Bc::b_row: { // b is [1 x f]
        Tensor out({a.rows(), a.cols()});
        const std::int64_t f = a.cols();
        for (std::int64_t i = 0; i < a.rows(); ++i) {
            const double* ap = a.data() + i * f;
            double* o = out.data() + i * f;
            kern(ap, b.data(), o, static_cast<std::size_t>(f));
        }
        return out;
    }
    }
    throw ShapeError("unreachable broadcast case");
}

template <typename F>
Tensor map(const Tensor& a, F f) {
    Tensor out({a.rows(), a.cols()});
    const double* ap = a.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = f(ap[i]);
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(a, b, kernels::active().vadd, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(a, b, kernels::active().vsub, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(a, b, kernels::active().vmul, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(a, b, kernels::active().vdiv, [](double x, double y) { return x / y; });
}

Tensor neg(const Tensor& a) {
    Tensor out({a.rows(), a.cols()});
    kernels::active().vneg(a.data(), out.data(), static_cast<std::size_t>(a.numel()));
    return out;
}

Tensor max0(const Tensor& a) {
    Tensor out({a.rows(), a.cols()});
    kernels::active().vmax0(a.data(), out.data(), static_cast<std::size_t>(a.numel()));
    return out;
}

Tensor tanh(const Tensor& a) { return map(a, [](double x) { return std::tanh(x); }); }

Tensor sigmoid(const Tensor& a) {
    return map(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor exp(const Tensor& a) { return map(a, [](double x) { return std::exp(x); }); }

Tensor sqrt(const Tensor& a) { return map(a, [](double x) { return std::sqrt(x); }); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() > 2 || b.rank() > 2)
        throw ShapeError("matmul takes rank<=2 tensors, got " + a.shape_str() + " and " +
                         b.shape_str());
    if (a.cols() != b.rows())
        throw ShapeError("matmul inner extents disagree: " + a.shape_str() + " * " + b.shape_str());
    Tensor out({a.rows(), b.cols()});
    kernels::active().matmul(a.data(), b.data(), out.data(), static_cast<std::size_t>(a.rows()),
                             static_cast<std::size_t>(a.cols()),
                             static_cast<std::size_t>(b.cols()));
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() > 2) throw ShapeError("transpose takes rank<=2 tensors, got " + a.shape_str());
    Tensor out({a.cols(), a.rows()});
    for (std::int64_t i = 0; i < a.rows(); ++i)
        for (std::int64_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Tensor sum_all(const Tensor& a) {
    return Tensor::scalar(kernels::active().sum(a.data(), static_cast<std::size_t>(a.numel())));
}

Tensor sum_rows(const Tensor& a) {
    Tensor out({a.rows(), 1});
    for (std::int64_t i = 0; i < a.rows(); ++i)
        out(i, 0) = kernels::active().sum(a.data() + i * a.cols(), static_cast<std::size_t>(a.cols()));
    return out;
}

Tensor sum_cols(const Tensor& a) {
    Tensor out({1, a.cols()});
    const auto& k = kernels::active();
    for (std::int64_t i = 0; i < a.rows(); ++i)
        k.vadd(out.data(), a.data() + i * a.cols(), out.data(), static_cast<std::size_t>(a.cols()));
    return out;
}

} // namespace tmath

} // namespace fbsde
