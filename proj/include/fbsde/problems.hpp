#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fbsde/autodiff.hpp"
#include "fbsde/fbm.hpp"
#include "fbsde/tensor.hpp"

namespace fbsde::problems {

struct BsParams {
    double mu = 0.0;
    double sigma = 0.0;
    double r = 0.0;
    double strike = 0.0;
    double r_l = 0.0;
    double r_b = 0.0;
};

// Pathwise evaluation of X_t = x0 exp(mu t + sigma B_t - sigma^2 t^{2H} / 2)
// on the grid; the forward leg carries no discretization error.
Tensor geometric_fbm_forward(const Tensor& paths, double x0, double mu, double sigma,
                             const fbm::Grid& grid, double hurst);

// Euler recursion X_{k+1} = X_k + mu(t_k, X_k) dt + sigma dB_k with constant
// sigma (for random sigma the product would need a Wick correction of its
// own, which this solver does not support).
Tensor euler_forward(const Tensor& paths, double x0,
                     const std::function<double(double, double)>& mu_fn, double sigma,
                     const fbm::Grid& grid);
Tensor euler_forward(const Tensor& paths, double x0,
                     const std::function<double(double, double)>& mu_fn,
                     const std::function<double(double, double)>& sigma_fn,
                     const fbm::Grid& grid); // always rejects: state-dependent sigma

// Diagonal s = t of the phi-derivative of geometric fBM,
// sigma H X_t t^{2H-1}; the (t - s)^{2H-1} term vanishes in the limit s -> t
// for H > 1/2, and the value at t = 0 is 0.
double dphi_diag_gbm(double t, double x_t, double sigma, double hurst);

// Off-diagonal value for s <= t, sigma H X_t [s^{2H-1} + (t-s)^{2H-1}].
// The bracket carries a plus sign: it equals sigma X_t int_0^t phi(u, s) du,
// which the quadrature tests verify directly.
double dphi_offdiag_gbm(double s, double t, double x_t, double sigma, double hurst);

// Additive case X = x0 + sigma B: the diagonal is sigma H t^{2H-1},
// independent of the state.
double dphi_diag_additive(double t, double sigma, double hurst);

// Exact integral (1 / dt) int_{t_n}^{t_{n+1}} int_0^{t_j} phi(u, s) du ds for
// t_j <= t_n < t_{n+1}:
//   { [t_{n+1}^{2H} - t_n^{2H}] - [(t_{n+1}-t_j)^{2H} - (t_n-t_j)^{2H}] } / (2 dt).
// This is the per-step kernel average the rollout pairs with d Z_n / d X_j;
// it vanishes identically at H = 1/2 and tends to H t^{2H-1} as dt -> 0.
double wick_step_kernel(double t_j, double t_n, double t_np1, double hurst);

// Closed-form call price with total volatility sigma sqrt(T^{2H} - t^{2H}).
// At t == T returns the payoff directly. Throws std::domain_error for t > T.
double bs_closed_form(double t, double x, const BsParams& p, double t_end, double hurst);

// Drivers build f(t, x, y, z) on the graph: y is [m x 1], z is [m x d],
// x is the numeric state slice. Result is [m x 1].
using Driver = std::function<ad::Var(ad::Graph&, double, const Tensor&, ad::Var, ad::Var)>;

Driver make_driver_linear_bs(double r);                                // f = -r y
Driver make_driver_two_rates(double mu, double sigma, double r_l, double r_b);
Driver make_driver_heat();                                             // f = (1-y^2)/(1+y^2)

// Terminal conditions g: numeric [m x d] -> [m x 1].
using Terminal = std::function<Tensor(const Tensor&)>;

Terminal make_terminal_max_call(double strike);       // max(max_i x_i - K, 0)
Terminal make_terminal_call_spread();                 // (max_i x_i - 120)+ - 2 (max_i x_i - 150)+
Terminal make_terminal_heat(double t_end, double hurst); // 5 exp(T^{2H}) / (10 + 2 |x|^2)

struct Problem {
    std::string name;
    int dim = 1;
    double t_end = 0.0;
    double hurst = 0.5;
    double x0 = 0.0;
    bool wick_correction_enabled = true;
    std::function<Tensor(const Tensor&, const fbm::Grid&)> forward; // fBM paths -> X paths
    std::function<Tensor(double, const Tensor&)> dphi_diag;         // (t, X_t) -> [m x d]
    // Step-averaged phi-derivative of X_{t_j} over [t_n, t_{n+1}], paired by
    // the rollout with d Z_n / d X_j. For the diffusion part sigma(X) X this
    // is sigma X_j wick_step_kernel(...); at j = n, dt -> 0 it recovers
    // dphi_diag.
    std::function<Tensor(double t_j, double t_n, double t_np1, const Tensor& x_j)> dphi_step;
    Driver driver;
    Terminal terminal;
    std::optional<double> truth; // closed form or configured reference value
};

struct ProblemSpec {
    std::string name;
    int dim = 1;
    double t_end = 0.0;
    double hurst = 0.5;
    double x0 = 0.0;
    BsParams bs;
    bool wick_correction = true;
};

// Problems by name: black_scholes_1d, black_scholes_maxcall,
// two_rates_spread, semilinear_heat.
Problem make_problem(const ProblemSpec& spec);

} // namespace fbsde::problems
