#include <doctest.h>

#include <cmath>
#include <functional>

#include "fbsde/autodiff.hpp"
#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"
#include "fbsde/tensor.hpp"
#include "oracles.hpp"

using namespace fbsde;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    rng::Stream s(seed, 3);
    std::uint64_t c = 0;
    for (auto& v : t.values()) v = s.uniform_in(c++, lo, hi);
    return t;
}

// Compares the reverse-mode gradient of a scalar-valued builder against
// central finite differences, entry by entry.
void check_grad_fd(const Tensor& leaf_init,
                   const std::function<ad::Var(ad::Graph&, ad::Var)>& build, double tol = 1e-5,
                   double h = 1e-6) {
    ad::Graph g;
    ad::Var w = g.leaf(leaf_init);
    ad::Var root = build(g, w);
    auto grads = ad::backward(g, root);
    const Tensor& analytic = grads.at(w.id());

    Tensor probe = leaf_init;
    for (std::int64_t i = 0; i < probe.numel(); ++i) {
        auto f = [&](double v) {
            Tensor t = leaf_init;
            t.data()[i] = v;
            ad::Graph g2;
            ad::Var w2 = g2.leaf(t);
            return build(g2, w2).value().scalar_value();
        };
        const double fd = oracles::central_diff(f, leaf_init.data()[i], h);
        CHECK(std::fabs(analytic.data()[i] - fd) <= tol * (1.0 + std::fabs(fd)));
    }
}

} // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("matmul identity and hand arithmetic") {
    ad::Graph g;
    Tensor id2({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {0.3, -1.2, 2.5, 0.7});
    ad::Var prod = ad::matmul(g.constant(id2), g.constant(a));
    for (std::int64_t i = 0; i < 4; ++i) CHECK(prod.value().data()[i] == a.data()[i]);

    Tensor b({2, 2}, {1, 2, 3, 4});
    Tensor ones({2, 1}, {1, 1});
    ad::Var p2 = ad::matmul(g.constant(b), g.constant(ones));
    CHECK(p2.value()(0, 0) == 3.0);
    CHECK(p2.value()(1, 0) == 7.0);
}

TEST_CASE("matmul equals the triple-loop oracle on random inputs") {
    ad::Graph g;
    Tensor a = random_tensor({6, 4}, 1);
    Tensor b = random_tensor({4, 9}, 2);
    Tensor want = oracles::matmul_naive(a, b);
    ad::Var got = ad::matmul(g.constant(a), g.constant(b));
    for (std::int64_t i = 0; i < want.numel(); ++i)
        CHECK(std::fabs(got.value().data()[i] - want.data()[i]) <= 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    ad::Graph g;
    ad::Var a = g.constant(Tensor::zeros({2, 3}));
    ad::Var b = g.constant(Tensor::zeros({2, 3}));
    try {
        ad::matmul(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("elementwise basics") {
    ad::Graph g;
    CHECK(ad::tanh(g.constant_scalar(0.0)).value().scalar_value() == 0.0);
    CHECK(ad::max0(g.constant_scalar(-3.0)).value().scalar_value() == 0.0);
    CHECK(ad::max0(g.constant_scalar(2.0)).value().scalar_value() == 2.0);
    CHECK(ad::sigmoid(g.constant_scalar(0.0)).value().scalar_value() == 0.5);

    ad::Var a = g.constant(Tensor::zeros({2, 3}));
    ad::Var b = g.constant(Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
}

TEST_CASE("layer_norm standardizes a row") {
    ad::Graph g;
    ad::Var x = g.constant(Tensor({1, 3}, {1, 2, 3}));
    ad::Var gamma = g.constant(Tensor::full({1, 3}, 1.0));
    ad::Var beta = g.constant(Tensor::zeros({1, 3}));
    ad::Var out = ad::layer_norm(x, gamma, beta, 1e-12);
    const Tensor& v = out.value();
    double mean = (v(0, 0) + v(0, 1) + v(0, 2)) / 3.0;
    double var = 0.0;
    for (int j = 0; j < 3; ++j) var += (v(0, j) - mean) * (v(0, j) - mean);
    var /= 3.0;
    CHECK(std::fabs(mean) <= 1e-12);
    CHECK(std::fabs(var - 1.0) <= 1e-6);
}

TEST_CASE("layer_norm on a constant row returns beta") {
    ad::Graph g;
    ad::Var x = g.constant(Tensor::full({1, 3}, 5.0));
    ad::Var gamma = g.constant(Tensor::full({1, 3}, 1.3));
    Tensor beta_t({1, 3}, {0.1, -0.2, 0.3});
    ad::Var out = ad::layer_norm(x, gamma, g.constant(beta_t), 1e-5);
    for (int j = 0; j < 3; ++j) CHECK(out.value()(0, j) == beta_t(0, j));
}

TEST_CASE("layer_norm rejects zero variance when eps is zero") {
    ad::Graph g;
    ad::Var x = g.constant(Tensor::full({2, 4}, 5.0));
    ad::Var gamma = g.constant(Tensor::full({1, 4}, 1.0));
    ad::Var beta = g.constant(Tensor::zeros({1, 4}));
    CHECK_THROWS_AS(ad::layer_norm(x, gamma, beta, 0.0), NumericalError);
}

TEST_CASE("layer_norm row statistics on random input") {
    ad::Graph g;
    Tensor x = random_tensor({5, 11}, 42, -3.0, 3.0);
    ad::Var out = ad::layer_norm(g.constant(x), g.constant(Tensor::full({1, 11}, 1.0)),
                                 g.constant(Tensor::zeros({1, 11})), 1e-12);
    for (std::int64_t i = 0; i < 5; ++i) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < 11; ++j) mean += out.value()(i, j);
        mean /= 11.0;
        double var = 0.0;
        for (std::int64_t j = 0; j < 11; ++j)
            var += (out.value()(i, j) - mean) * (out.value()(i, j) - mean);
        var /= 11.0;
        CHECK(std::fabs(mean) <= 1e-10);
        CHECK(std::fabs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("backward of a linear form returns the other factor") {
    ad::Graph g;
    Tensor w_t({1, 4}, {0.5, -1.0, 2.0, 0.25});
    Tensor x_t({1, 4}, {1.0, 2.0, 3.0, 4.0});
    ad::Var w = g.leaf(w_t);
    ad::Var root = ad::sum_all(ad::mul(w, g.constant(x_t)));
    auto grads = ad::backward(g, root);
    const Tensor& gw = grads.at(w.id());
    for (std::int64_t i = 0; i < 4; ++i) CHECK(gw.data()[i] == x_t.data()[i]);
}

TEST_CASE("backward of tanh at zero is one") {
    ad::Graph g;
    ad::Var w = g.leaf(Tensor::scalar(0.0));
    auto grads = ad::backward(g, ad::tanh(w));
    CHECK(grads.at(w.id()).scalar_value() == 1.0);
}

TEST_CASE("backward rejects non-scalar roots") {
    ad::Graph g;
    ad::Var w = g.leaf(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(ad::backward(g, ad::tanh(w)), ShapeError);
}

TEST_CASE("per-op gradients match finite differences") {
    const Tensor w0 = random_tensor({2, 3}, 7, 0.2, 1.5); // positive, safe for div/sqrt
    using B = std::function<ad::Var(ad::Graph&, ad::Var)>;
    std::vector<B> builders = {
        [](ad::Graph& g, ad::Var w) { return ad::sum_all(ad::add(w, g.constant_scalar(0.3))); },
        [](ad::Graph& g, ad::Var w) { return ad::sum_all(ad::sub(g.constant_scalar(1.0), w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::mul(w, w)); },
        [](ad::Graph& g, ad::Var w) {
            return ad::sum_all(ad::div(g.constant(Tensor::full({2, 3}, 2.0)), w));
        },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::neg(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::tanh(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::sigmoid(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::exp(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::sqrt(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::max0(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::transpose(w)); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::sum_rows(ad::mul(w, w))); },
        [](ad::Graph&, ad::Var w) { return ad::sum_all(ad::sum_cols(ad::exp(w))); },
        [](ad::Graph& g, ad::Var w) {
            return ad::sum_all(ad::matmul(w, g.constant(random_tensor({3, 2}, 9))));
        },
        [](ad::Graph&, ad::Var w) {
            // broadcast row and column paths
            ad::Var col = ad::sum_rows(w);
            ad::Var row = ad::sum_cols(w);
            return ad::sum_all(ad::mul(ad::sub(w, col), ad::add(w, row)));
        },
        [](ad::Graph& g, ad::Var w) {
            ad::Var gamma = g.constant(random_tensor({1, 3}, 13, 0.9, 1.1));
            ad::Var beta = g.constant(random_tensor({1, 3}, 14, -0.1, 0.1));
            return ad::sum_all(ad::layer_norm(w, gamma, beta, 1e-5));
        },
    };
    for (const auto& b : builders) check_grad_fd(w0, b);
}

TEST_CASE("gradient of a composite matches finite differences") {
    const Tensor w0 = random_tensor({2, 4}, 21, -0.8, 0.8);
    check_grad_fd(w0, [](ad::Graph& g, ad::Var w) {
        ad::Var a = ad::tanh(ad::matmul(w, g.constant(random_tensor({4, 3}, 22))));
        ad::Var b = ad::sigmoid(ad::add(a, g.constant_scalar(0.1)));
        return ad::sum_all(ad::mul(b, ad::exp(ad::mul(g.constant_scalar(0.3), a))));
    });
}

TEST_CASE("value-mode gradients are bitwise identical to graph-mode gradients") {
    const Tensor w0 = random_tensor({3, 4}, 91, 0.2, 1.1);
    ad::Graph g;
    ad::Var w = g.leaf(w0);
    ad::Var gamma = g.constant(random_tensor({1, 4}, 92, 0.9, 1.1));
    ad::Var beta = g.constant(random_tensor({1, 4}, 93, -0.1, 0.1));
    ad::Var ln = ad::layer_norm(ad::mul(w, w), gamma, beta, 1e-5);
    ad::Var root = ad::sum_all(ad::mul(ad::tanh(ln), ad::sigmoid(ad::sqrt(w))));
    ad::Var targets[] = {w};
    const Tensor via_values = ad::grad_values(root, targets)[0];
    const Tensor via_graph = ad::grad(root, targets)[0].value();
    REQUIRE(via_values.numel() == via_graph.numel());
    for (std::int64_t i = 0; i < via_values.numel(); ++i)
        CHECK(via_values.data()[i] == via_graph.data()[i]);
}

TEST_CASE("graph replay determinism is bitwise") {
    const Tensor w0 = random_tensor({3, 3}, 31);
    auto build = [&](ad::Graph& g) {
        ad::Var w = g.leaf(w0);
        ad::Var root = ad::sum_all(ad::tanh(ad::matmul(w, w)));
        auto grads = ad::backward(g, root);
        return std::pair<Tensor, Tensor>(root.value(), grads.at(w.id()));
    };
    ad::Graph g1, g2;
    auto [v1, d1] = build(g1);
    auto [v2, d2] = build(g2);
    CHECK(v1.scalar_value() == v2.scalar_value());
    for (std::int64_t i = 0; i < d1.numel(); ++i) CHECK(d1.data()[i] == d2.data()[i]);
}

TEST_CASE("jacobian diagonal of the identity map is one") {
    ad::Graph g;
    ad::Var x = g.leaf(random_tensor({4, 3}, 41));
    ad::Var diag = ad::input_jacobian_diag(x, x);
    for (double v : diag.value().values()) CHECK(v == 1.0);
}

TEST_CASE("jacobian diagonal of the square map is 2x") {
    ad::Graph g;
    ad::Var x = g.leaf(Tensor::scalar(3.0));
    ad::Var y = ad::mul(x, x);
    ad::Var diag = ad::input_jacobian_diag(y, x);
    CHECK(diag.value().scalar_value() == 6.0);
}

TEST_CASE("jacobian diagonal of a two-layer tanh net matches finite differences") {
    const Tensor x0 = random_tensor({3, 2}, 51, -0.9, 0.9);
    const Tensor w1 = random_tensor({2, 5}, 52);
    const Tensor w2 = random_tensor({5, 2}, 53);

    ad::Graph g;
    ad::Var x = g.constant(x0);
    ad::Var out = ad::matmul(ad::tanh(ad::matmul(x, g.constant(w1))), g.constant(w2));
    ad::Var diag = ad::input_jacobian_diag(out, x);

    auto eval = [&](const Tensor& xt, std::int64_t mi, std::int64_t ci) {
        ad::Graph g2;
        ad::Var x2 = g2.constant(xt);
        ad::Var o = ad::matmul(ad::tanh(ad::matmul(x2, g2.constant(w1))), g2.constant(w2));
        return o.value()(mi, ci);
    };
    for (std::int64_t m = 0; m < 3; ++m)
        for (std::int64_t c = 0; c < 2; ++c) {
            auto f = [&](double v) {
                Tensor xt = x0;
                xt(m, c) = v;
                return eval(xt, m, c);
            };
            const double fd = oracles::central_diff(f, x0(m, c));
            CHECK(std::fabs(diag.value()(m, c) - fd) <= 1e-5 * (1.0 + std::fabs(fd)));
        }
}

TEST_CASE("jacobian diagonal of unreachable outputs is zero") {
    ad::Graph g;
    ad::Var x = g.leaf(random_tensor({2, 3}, 61));
    ad::Var other = g.constant(random_tensor({2, 3}, 62));
    ad::Var out = ad::mul(other, other);
    ad::Var diag = ad::input_jacobian_diag(out, x);
    for (double v : diag.value().values()) CHECK(v == 0.0);
}

TEST_CASE("jacobian diagonal never mixes batch rows") {
    const Tensor w1 = random_tensor({3, 7}, 71);
    const Tensor w2 = random_tensor({7, 3}, 72);
    auto diag_of = [&](const Tensor& xt) {
        ad::Graph g;
        ad::Var x = g.constant(xt);
        ad::Var out = ad::matmul(ad::tanh(ad::matmul(x, g.constant(w1))), g.constant(w2));
        return ad::input_jacobian_diag(out, x).value();
    };
    Tensor x0 = random_tensor({4, 3}, 73);
    const Tensor base = diag_of(x0);
    Tensor x1 = x0;
    x1(2, 1) += 0.25; // perturb one sample only
    const Tensor bumped = diag_of(x1);
    for (std::int64_t m = 0; m < 4; ++m) {
        if (m == 2) continue;
        for (std::int64_t c = 0; c < 3; ++c) CHECK(base(m, c) == bumped(m, c));
    }
}

TEST_CASE("gradients flow through the jacobian diagonal") {
    // d/dw of sum(diag) where out = tanh(x * w): diag_i = (1 - out^2) w_ii,
    // checked against finite differences through the whole construction.
    const Tensor w0 = random_tensor({2, 2}, 81, 0.3, 0.9);
    const Tensor x0 = random_tensor({3, 2}, 82, -0.5, 0.5);
    check_grad_fd(w0, [&](ad::Graph& g, ad::Var w) {
        ad::Var x = g.constant(x0);
        ad::Var out = ad::tanh(ad::matmul(x, w));
        return ad::sum_all(ad::input_jacobian_diag(out, x));
    });
}

TEST_SUITE_END();
