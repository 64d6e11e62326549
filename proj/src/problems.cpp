#include "fbsde/problems.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde::problems {

Tensor geometric_fbm_forward(const Tensor& paths, double x0, double mu, double sigma,
                             const fbm::Grid& grid, double hurst) {
    if (paths.rank() != 3) throw ShapeError("forward needs [m x (N+1) x d] fBM paths");
    const std::int64_t m = paths.dim(0), nodes = paths.dim(1), d = paths.dim(2);
    if (nodes != grid.n_steps() + 1)
        throw ShapeError("path length does not match the grid");
    Tensor x({m, nodes, d});
    for (std::int64_t n = 0; n < nodes; ++n) {
        const double t = grid.t[static_cast<std::size_t>(n)];
        const double drift = mu * t - 0.5 * sigma * sigma * std::pow(t, 2.0 * hurst);
        for (std::int64_t p = 0; p < m; ++p)
            for (std::int64_t c = 0; c < d; ++c)
                x.at3(p, n, c) = x0 * std::exp(drift + sigma * paths.at3(p, n, c));
    }
    return x;
}

Tensor euler_forward(const Tensor& paths, double x0,
                     const std::function<double(double, double)>& mu_fn, double sigma,
                     const fbm::Grid& grid) {
    if (paths.rank() != 3) throw ShapeError("forward needs [m x (N+1) x d] fBM paths");
    const std::int64_t m = paths.dim(0), nodes = paths.dim(1), d = paths.dim(2);
    if (nodes != grid.n_steps() + 1)
        throw ShapeError("path length does not match the grid");
    Tensor x({m, nodes, d});
    for (std::int64_t p = 0; p < m; ++p)
        for (std::int64_t c = 0; c < d; ++c) x.at3(p, 0, c) = x0;
    for (std::int64_t n = 0; n + 1 < nodes; ++n) {
        const double t = grid.t[static_cast<std::size_t>(n)];
        const double dt = grid.dt(static_cast<int>(n));
        for (std::int64_t p = 0; p < m; ++p)
            for (std::int64_t c = 0; c < d; ++c) {
                const double cur = x.at3(p, n, c);
                const double db = paths.at3(p, n + 1, c) - paths.at3(p, n, c);
                x.at3(p, n + 1, c) = cur + mu_fn(t, cur) * dt + sigma * db;
            }
    }
    return x;
}

Tensor euler_forward(const Tensor&, double, const std::function<double(double, double)>&,
                     const std::function<double(double, double)>&, const fbm::Grid&) {
    throw ConfigError(
        "euler_forward: state-dependent sigma is an unsupported configuration; "
        "only constant diffusion coefficients are available");
}

namespace {

void check_dphi_args(double t, double hurst) {
    if (t < 0.0) throw ConfigError("phi-derivative needs t >= 0");
    if (!(hurst > 0.5 && hurst < 1.0))
        throw ConfigError("phi-derivative requires Hurst in (1/2, 1)");
}

} // namespace

double dphi_diag_gbm(double t, double x_t, double sigma, double hurst) {
    check_dphi_args(t, hurst);
    if (t == 0.0) return 0.0;
    return sigma * hurst * x_t * std::pow(t, 2.0 * hurst - 1.0);
}

double dphi_offdiag_gbm(double s, double t, double x_t, double sigma, double hurst) {
    check_dphi_args(t, hurst);
    if (s < 0.0 || s > t) throw ConfigError("phi-derivative off-diagonal needs 0 <= s <= t");
    const double a = 2.0 * hurst - 1.0;
    return sigma * hurst * x_t * (std::pow(s, a) + std::pow(t - s, a));
}

double dphi_diag_additive(double t, double sigma, double hurst) {
    check_dphi_args(t, hurst);
    if (t == 0.0) return 0.0;
    return sigma * hurst * std::pow(t, 2.0 * hurst - 1.0);
}

double wick_step_kernel(double t_j, double t_n, double t_np1, double hurst) {
    check_dphi_args(t_n, hurst);
    if (!(t_j <= t_n && t_n < t_np1))
        throw ConfigError("wick_step_kernel needs t_j <= t_n < t_{n+1}");
    const double h2 = 2.0 * hurst;
    const double dt = t_np1 - t_n;
    const double bracket = (std::pow(t_np1, h2) - std::pow(t_n, h2)) -
                           (std::pow(t_np1 - t_j, h2) - std::pow(t_n - t_j, h2));
    return 0.5 * bracket / dt;
}

double bs_closed_form(double t, double x, const BsParams& p, double t_end, double hurst) {
    if (t > t_end) throw std::domain_error("bs_closed_form: t exceeds the horizon");
    if (!(x > 0.0)) throw std::domain_error("bs_closed_form: spot must be positive");
    const double payoff = std::max(x - p.strike, 0.0);
    if (t == t_end) return payoff;
    const double h2 = 2.0 * hurst;
    const double total_var = std::pow(t_end, h2) - std::pow(t, h2);
    if (total_var <= 0.0) return payoff;
    const double v = p.sigma * std::sqrt(total_var);
    const double eta = (std::log(x / p.strike) + p.r * (t_end - t)) / v;
    const double d1 = eta + 0.5 * v;
    const double d2 = eta - 0.5 * v;
    return x * rng::normal_cdf(d1) - p.strike * std::exp(-p.r * (t_end - t)) * rng::normal_cdf(d2);
}

Driver make_driver_linear_bs(double r) {
    return [r](ad::Graph& g, double, const Tensor&, ad::Var y, ad::Var) {
        return ad::mul(g.constant_scalar(-r), y);
    };
}

Driver make_driver_two_rates(double mu, double sigma, double r_l, double r_b) {
    return [mu, sigma, r_l, r_b](ad::Graph& g, double, const Tensor&, ad::Var y, ad::Var z) {
        ad::Var zsum = ad::sum_rows(z);
        ad::Var term1 = ad::mul(g.constant_scalar(-r_l), y);
        ad::Var term2 = ad::mul(g.constant_scalar(-(mu - r_l) / sigma), zsum);
        ad::Var gap = ad::sub(ad::mul(g.constant_scalar(1.0 / sigma), zsum), y);
        ad::Var term3 = ad::mul(g.constant_scalar(r_b - r_l), ad::max0(gap));
        return ad::add(ad::add(term1, term2), term3);
    };
}

Driver make_driver_heat() {
    return [](ad::Graph& g, double, const Tensor&, ad::Var y, ad::Var) {
        ad::Var yy = ad::mul(y, y);
        ad::Var one = g.constant_scalar(1.0);
        return ad::div(ad::sub(one, yy), ad::add(one, yy));
    };
}

namespace {

Tensor rowwise_max(const Tensor& x) {
    Tensor out({x.rows(), 1});
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (std::int64_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        out(i, 0) = mx;
    }
    return out;
}

} // namespace

Terminal make_terminal_max_call(double strike) {
    return [strike](const Tensor& x) {
        Tensor mx = rowwise_max(x);
        for (double& v : mx.values()) v = std::max(v - strike, 0.0);
        return mx;
    };
}

Terminal make_terminal_call_spread() {
    return [](const Tensor& x) {
        Tensor mx = rowwise_max(x);
        for (double& v : mx.values())
            v = std::max(v - 120.0, 0.0) - 2.0 * std::max(v - 150.0, 0.0);
        return mx;
    };
}

Terminal make_terminal_heat(double t_end, double hurst) {
    const double num = 5.0 * std::exp(std::pow(t_end, 2.0 * hurst));
    return [num](const Tensor& x) {
        Tensor out({x.rows(), 1});
        for (std::int64_t i = 0; i < x.rows(); ++i) {
            double n2 = 0.0;
            for (std::int64_t j = 0; j < x.cols(); ++j) n2 += x(i, j) * x(i, j);
            out(i, 0) = num / (10.0 + 2.0 * n2);
        }
        return out;
    };
}

Problem make_problem(const ProblemSpec& spec) {
    Problem prob;
    prob.name = spec.name;
    prob.dim = spec.dim;
    prob.t_end = spec.t_end;
    prob.hurst = spec.hurst;
    prob.x0 = spec.x0;
    prob.wick_correction_enabled = spec.wick_correction;

    const BsParams bs = spec.bs;
    const double hurst = spec.hurst;

    auto gbm_forward = [bs, x0 = spec.x0, hurst](const Tensor& paths, const fbm::Grid& grid) {
        return geometric_fbm_forward(paths, x0, bs.mu, bs.sigma, grid, hurst);
    };
    auto gbm_dphi = [bs, hurst](double t, const Tensor& x_t) {
        Tensor out({x_t.rows(), x_t.cols()});
        for (std::int64_t i = 0; i < x_t.numel(); ++i)
            out.data()[i] = dphi_diag_gbm(t, x_t.data()[i], bs.sigma, hurst);
        return out;
    };
    auto gbm_dphi_step = [bs, hurst](double t_j, double t_n, double t_np1, const Tensor& x_j) {
        const double k = wick_step_kernel(t_j, t_n, t_np1, hurst);
        Tensor out({x_j.rows(), x_j.cols()});
        for (std::int64_t i = 0; i < x_j.numel(); ++i)
            out.data()[i] = bs.sigma * x_j.data()[i] * k;
        return out;
    };

    if (spec.name == "black_scholes_1d") {
        if (spec.dim != 1) throw ConfigError("black_scholes_1d requires dim = 1");
        prob.forward = gbm_forward;
        prob.dphi_diag = gbm_dphi;
        prob.dphi_step = gbm_dphi_step;
        prob.driver = make_driver_linear_bs(bs.r);
        prob.terminal = make_terminal_max_call(bs.strike);
        prob.truth = bs_closed_form(0.0, spec.x0, bs, spec.t_end, hurst);
    } else if (spec.name == "black_scholes_maxcall") {
        prob.forward = gbm_forward;
        prob.dphi_diag = gbm_dphi;
        prob.dphi_step = gbm_dphi_step;
        prob.driver = make_driver_linear_bs(bs.r);
        prob.terminal = make_terminal_max_call(bs.strike);
    } else if (spec.name == "two_rates_spread") {
        prob.forward = gbm_forward;
        prob.dphi_diag = gbm_dphi;
        prob.dphi_step = gbm_dphi_step;
        prob.driver = make_driver_two_rates(bs.mu, bs.sigma, bs.r_l, bs.r_b);
        prob.terminal = make_terminal_call_spread();
    } else if (spec.name == "semilinear_heat") {
        // X = x0 + B: zero drift, unit diffusion.
        prob.forward = [x0 = spec.x0](const Tensor& paths, const fbm::Grid& grid) {
            return euler_forward(paths, x0, [](double, double) { return 0.0; }, 1.0, grid);
        };
        prob.dphi_diag = [hurst](double t, const Tensor& x_t) {
            return Tensor::full({x_t.rows(), x_t.cols()}, dphi_diag_additive(t, 1.0, hurst));
        };
        prob.dphi_step = [hurst](double t_j, double t_n, double t_np1, const Tensor& x_j) {
            return Tensor::full({x_j.rows(), x_j.cols()},
                                wick_step_kernel(t_j, t_n, t_np1, hurst));
        };
        prob.driver = make_driver_heat();
        prob.terminal = make_terminal_heat(spec.t_end, hurst);
    } else {
        throw ConfigError("unknown problem '" + spec.name + "'");
    }
    return prob;
}

} // namespace fbsde::problems
