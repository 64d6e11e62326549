#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbsde/autodiff.hpp"
#include "fbsde/fbm.hpp"
#include "fbsde/networks.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/tensor.hpp"

namespace fbsde::solver {

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RolloutOptions {
    bool wick_correction = true;
    // Treat the extracted input derivatives as constants (ablation).
    bool stop_gradient_correction = false;
    // Contract the full per-sample Jacobian instead of its diagonal.
    bool full_jacobian = false;
};

// One backward Euler pass. Everything stays on the graph so the loss
// gradient flows through the correction term as well.
struct RolloutResult {
    std::vector<ad::Var> y;          // N+1 states, each [m x 1]; y[0] is y0 broadcast
    std::vector<ad::Var> z;          // N network outputs, each [m x d]
    std::vector<ad::Var> correction; // N corrections, each [m x 1]; zero at t_0 = 0
    ad::Var terminal_gap;            // g(X_T) - Y_N, [m x 1]
    std::vector<ad::Var> param_leaves;
    ad::Var y0_leaf;

    Tensor y_matrix() const;           // [m x (N+1)]
    Tensor z_tensor() const;           // [m x N x d]
    Tensor correction_matrix() const;  // [m x N]
};

RolloutResult rollout(ad::Graph& g, const nets::Network& net, const Tensor& y0, const Tensor& x,
                      const Tensor& db, const problems::Problem& prob, const fbm::Grid& grid,
                      const RolloutOptions& opts, long iteration = -1);

// Empirical mean of the squared terminal gap over the mini-batch.
ad::Var terminal_loss(ad::Graph& g, const RolloutResult& r);

struct TrainState {
    std::unique_ptr<nets::Network> net;
    Tensor y0; // [1 x 1]
    std::vector<Tensor> adam_m, adam_v; // aligned: network tensors..., then y0
    long adam_steps = 0;
    long iter = 0;
};

TrainState make_train_state(const std::string& net_kind, int dim, int layers,
                            const nets::NetworkInit& init, double y0_min, double y0_max,
                            std::uint64_t seed);

// Bias-corrected Adam over (network parameters, y0). grads must be aligned
// with the state slots; non-finite gradients raise DivergenceError.
void adam_step(TrainState& st, std::span<const Tensor> grads, const AdamParams& ap);

struct HistoryRow {
    long iteration = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double u0 = 0.0;
    double rel_err = 0.0; // NaN when no truth is configured
    double elapsed_s = 0.0;
};

struct TrainConfig {
    std::string net_kind = "stacked_rnn";
    int layers = 2;
    int n_steps = 0;
    double t_end = 0.0;
    int batch_size = 0;
    int valid_size = 0;
    long max_iters = 0;
    int eval_every = 100;
    double lr = 0.0;
    double y0_min = 0.0, y0_max = 0.0;
    std::uint64_t seed = 0;
    RolloutOptions rollout;
    nets::NetworkInit net_init;
};

struct RunResult {
    double u0 = 0.0;
    double rel_err = 0.0;
    std::vector<HistoryRow> history;
    double elapsed_s = 0.0;
    TrainState state;
};

// Full optimization of one run: a fresh mini-batch of paths per iteration,
// validation on a fixed path set every eval_every iterations. Divergence
// propagates as DivergenceError carrying the iteration and step.
RunResult train(const problems::Problem& prob, const TrainConfig& cfg);

// Aggregation across independent runs, Tables-style.
struct U0Estimate {
    int runs = 0;
    double mean_u0 = 0.0;
    double std_u0 = 0.0;     // sample std, 0 for a single run
    double rel_l1_error = 0.0; // NaN when no truth
    double std_rel_err = 0.0;
};
U0Estimate estimate_u0(std::span<const double> run_u0s, const problems::Problem& prob);

} // namespace fbsde::solver
