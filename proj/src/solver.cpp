#include "fbsde/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde::solver {

namespace {

void check_finite(const Tensor& t, const char* what, long iteration, int step) {
    if (!t.all_finite())
        throw DivergenceError(std::string(what) + " became non-finite at iteration " +
                                  std::to_string(iteration) + ", step " + std::to_string(step),
                              iteration, step);
}

} // namespace

Tensor RolloutResult::y_matrix() const {
    const std::int64_t m = y.front().value().rows();
    Tensor out({m, static_cast<std::int64_t>(y.size())});
    for (std::size_t n = 0; n < y.size(); ++n)
        for (std::int64_t i = 0; i < m; ++i) out(i, static_cast<std::int64_t>(n)) = y[n].value()(i, 0);
    return out;
}

Tensor RolloutResult::z_tensor() const {
    const std::int64_t m = z.front().value().rows();
    const std::int64_t d = z.front().value().cols();
    Tensor out({m, static_cast<std::int64_t>(z.size()), d});
    for (std::size_t n = 0; n < z.size(); ++n)
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t c = 0; c < d; ++c)
                out.at3(i, static_cast<std::int64_t>(n), c) = z[n].value()(i, c);
    return out;
}

Tensor RolloutResult::correction_matrix() const {
    const std::int64_t m = correction.front().value().rows();
    Tensor out({m, static_cast<std::int64_t>(correction.size())});
    for (std::size_t n = 0; n < correction.size(); ++n)
        for (std::int64_t i = 0; i < m; ++i)
            out(i, static_cast<std::int64_t>(n)) = correction[n].value()(i, 0);
    return out;
}

RolloutResult rollout(ad::Graph& g, const nets::Network& net, const Tensor& y0, const Tensor& x,
                      const Tensor& db, const problems::Problem& prob, const fbm::Grid& grid,
                      const RolloutOptions& opts, long iteration) {
    const int n_steps = grid.n_steps();
    if (x.rank() != 3 || x.dim(1) != n_steps + 1)
        throw ShapeError("rollout: state tensor must be [m x (N+1) x d]");
    if (db.rank() != 3 || db.dim(1) != n_steps || db.dim(0) != x.dim(0) || db.dim(2) != x.dim(2))
        throw ShapeError("rollout: increment tensor must be [m x N x d] matching the states");
    const std::int64_t m = x.dim(0);

    RolloutResult out;
    auto fw = net.forward(g, x, n_steps);
    out.z = fw.z;
    out.param_leaves = std::move(fw.params);
    out.y0_leaf = g.leaf(y0);

    ad::Var ones_m = g.constant(Tensor::full({m, 1}, 1.0));
    out.y.push_back(ad::mul(ones_m, out.y0_leaf));

    const std::int64_t d = x.dim(2);
    for (int n = 0; n < n_steps; ++n) {
        const double t_n = grid.t[static_cast<std::size_t>(n)];
        const double t_np1 = grid.t[static_cast<std::size_t>(n) + 1];
        const double dt = grid.dt(n);
        const Tensor x_n = x.time_slice(n);
        ad::Var z_n = out.z[static_cast<std::size_t>(n)];

        // The network's Z_n is a functional of the whole path X_0..X_n, so
        // the Wick-product correction pairs every d Z_n / d X_j with the
        // step-averaged kernel of X_j over [t_n, t_{n+1}]. One backward
        // sweep per output coordinate yields all j at once. With the
        // stop-gradient ablation the sweeps accumulate plain tensors and the
        // correction enters the rollout as a constant.
        ad::Var corr;
        bool have_corr = false;
        if (opts.wick_correction) {
            std::vector<Tensor> kernels;
            kernels.reserve(static_cast<std::size_t>(n) + 1);
            for (int j = 0; j <= n; ++j)
                kernels.push_back(
                    prob.dphi_step(grid.t[static_cast<std::size_t>(j)], t_n, t_np1,
                                   x.time_slice(j)));
            std::span<const ad::Var> targets(fw.x.data(), static_cast<std::size_t>(n) + 1);
            Tensor corr_value({m, 1}); // used by the stop-gradient path
            bool any_numeric = false;
            for (std::int64_t i = 0; i < d; ++i) {
                ad::Var root;
                if (d == 1) {
                    root = ad::sum_all(z_n);
                } else {
                    Tensor mask({1, d});
                    mask(0, i) = 1.0;
                    root = ad::sum_all(ad::mul(z_n, g.constant(std::move(mask))));
                }
                std::vector<Tensor> weights;
                weights.reserve(static_cast<std::size_t>(n) + 1);
                for (int j = 0; j <= n; ++j) {
                    Tensor w = kernels[static_cast<std::size_t>(j)];
                    if (!opts.full_jacobian && d > 1) {
                        // trace form: keep coordinate i of X_j only
                        for (std::int64_t row = 0; row < m; ++row)
                            for (std::int64_t c = 0; c < d; ++c)
                                if (c != i) w(row, c) = 0.0;
                    }
                    bool all_zero = true;
                    for (double v : w.values()) all_zero = all_zero && v == 0.0;
                    if (all_zero) w = Tensor(); // sentinel: skip this pair
                    weights.push_back(std::move(w));
                }

                if (opts.stop_gradient_correction) {
                    std::vector<Tensor> grads = ad::grad_values(root, targets);
                    for (int j = 0; j <= n; ++j) {
                        const Tensor& w = weights[static_cast<std::size_t>(j)];
                        if (w.numel() == 0) continue;
                        const Tensor piece =
                            tmath::sum_rows(tmath::mul(grads[static_cast<std::size_t>(j)], w));
                        for (std::int64_t row = 0; row < m; ++row)
                            corr_value(row, 0) += piece(row, 0);
                        any_numeric = true;
                    }
                } else {
                    std::vector<ad::Var> grads = ad::grad(root, targets);
                    for (int j = 0; j <= n; ++j) {
                        Tensor& w = weights[static_cast<std::size_t>(j)];
                        if (w.numel() == 0) continue;
                        ad::Var piece = ad::sum_rows(
                            ad::mul(grads[static_cast<std::size_t>(j)], g.constant(std::move(w))));
                        corr = have_corr ? ad::add(corr, piece) : piece;
                        have_corr = true;
                    }
                }
            }
            if (opts.stop_gradient_correction && any_numeric) {
                corr = g.constant(std::move(corr_value));
                have_corr = true;
            }
        }
        if (!have_corr) corr = g.constant(Tensor::zeros({m, 1}));
        if (n == 0 && t_n == 0.0 && opts.wick_correction) {
            // The kernel integral over [0, t_1] of X_0 vanishes, so the
            // first correction must be exactly zero.
            for (double v : corr.value().values())
                if (v != 0.0) throw NumericalError("rollout: nonzero correction at t = 0");
        }
        out.correction.push_back(corr);

        ad::Var f = prob.driver(g, t_n, x_n, out.y.back(), z_n);
        ad::Var z_db = ad::sum_rows(ad::mul(z_n, g.constant(db.time_slice(n))));
        ad::Var y_next =
            ad::sub(out.y.back(), ad::mul(ad::add(f, corr), g.constant_scalar(dt)));
        y_next = ad::add(y_next, z_db);
        check_finite(y_next.value(), "rollout state Y", iteration, n);
        out.y.push_back(y_next);
    }

    Tensor g_term = prob.terminal(x.time_slice(n_steps));
    out.terminal_gap = ad::sub(g.constant(std::move(g_term)), out.y.back());
    return out;
}

ad::Var terminal_loss(ad::Graph& g, const RolloutResult& r) {
    const double m = static_cast<double>(r.terminal_gap.value().rows());
    ad::Var sq = ad::mul(r.terminal_gap, r.terminal_gap);
    return ad::mul(ad::sum_all(sq), g.constant_scalar(1.0 / m));
}

TrainState make_train_state(const std::string& net_kind, int dim, int layers,
                            const nets::NetworkInit& init, double y0_min, double y0_max,
                            std::uint64_t seed) {
    TrainState st;
    nets::NetworkInit ni = init;
    ni.seed = seed;
    st.net = nets::make_network(net_kind, dim, layers, ni);
    rng::Stream y0_stream(seed, /*stream=*/0x7930);
    st.y0 = Tensor::scalar(y0_stream.uniform_in(0, y0_min, y0_max));
    for (const auto& t : st.net->param_values()) {
        st.adam_m.emplace_back(Tensor::zeros(t.shape()));
        st.adam_v.emplace_back(Tensor::zeros(t.shape()));
    }
    st.adam_m.emplace_back(Tensor::zeros({1, 1}));
    st.adam_v.emplace_back(Tensor::zeros({1, 1}));
    return st;
}

void adam_step(TrainState& st, std::span<const Tensor> grads, const AdamParams& ap) {
    auto& params = st.net->param_values();
    const std::size_t slots = params.size() + 1;
    if (grads.size() != slots)
        throw ShapeError("adam_step: expected " + std::to_string(slots) + " gradients, got " +
                         std::to_string(grads.size()));
    for (const auto& gt : grads)
        if (!gt.all_finite())
            throw DivergenceError("non-finite gradient at iteration " + std::to_string(st.iter),
                                  st.iter, -1);

    const long t = ++st.adam_steps;
    const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(t));

    auto update = [&](Tensor& theta, Tensor& mo, Tensor& vo, const Tensor& grad) {
        if (!theta.same_shape(grad) && theta.numel() != grad.numel())
            throw ShapeError("adam_step: gradient shape mismatch");
        double* th = theta.data();
        double* mp = mo.data();
        double* vp = vo.data();
        const double* gp = grad.data();
        for (std::int64_t i = 0; i < theta.numel(); ++i) {
            mp[i] = ap.beta1 * mp[i] + (1.0 - ap.beta1) * gp[i];
            vp[i] = ap.beta2 * vp[i] + (1.0 - ap.beta2) * gp[i] * gp[i];
            th[i] -= ap.lr * (mp[i] / bc1) / (std::sqrt(vp[i] / bc2) + ap.eps);
        }
    };
    for (std::size_t k = 0; k < params.size(); ++k)
        update(params[k], st.adam_m[k], st.adam_v[k], grads[k]);
    update(st.y0, st.adam_m.back(), st.adam_v.back(), grads[slots - 1]);
}

RunResult train(const problems::Problem& prob, const TrainConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    fbm::Grid grid = fbm::Grid::uniform(cfg.t_end, cfg.n_steps);
    fbm::Sampler train_sampler(grid, prob.hurst, prob.dim, cfg.seed, /*stream=*/1);
    fbm::Sampler valid_sampler(grid, prob.hurst, prob.dim, cfg.seed, /*stream=*/2);

    RunResult out;
    TrainState& st = out.state;
    st = make_train_state(cfg.net_kind, prob.dim, cfg.layers, cfg.net_init, cfg.y0_min,
                          cfg.y0_max, cfg.seed);

    const Tensor valid_paths = valid_sampler.sample_paths(cfg.valid_size);
    const Tensor valid_x = prob.forward(valid_paths, grid);
    const Tensor valid_db = fbm::increments(valid_paths);

    AdamParams ap;
    ap.lr = cfg.lr;

    const auto truth = prob.truth;
    auto rel_err_of = [&](double u0) {
        return truth ? std::fabs(u0 - *truth) / std::fabs(*truth)
                     : std::numeric_limits<double>::quiet_NaN();
    };

    auto validation_loss = [&](long iteration) {
        ad::Graph g;
        auto ro = rollout(g, *st.net, st.y0, valid_x, valid_db, prob, grid, cfg.rollout,
                          iteration);
        return terminal_loss(g, ro).value().scalar_value();
    };

    double last_valid = cfg.max_iters > 0 ? validation_loss(0) : 0.0;
    out.history.reserve(static_cast<std::size_t>(cfg.max_iters));

    for (long it = 0; it < cfg.max_iters; ++it) {
        st.iter = it;
        const Tensor paths = train_sampler.sample_paths(
            cfg.batch_size, static_cast<std::int64_t>(it) * cfg.batch_size);
        const Tensor x = prob.forward(paths, grid);
        const Tensor db = fbm::increments(paths);

        ad::Graph g;
        auto ro = rollout(g, *st.net, st.y0, x, db, prob, grid, cfg.rollout, it);
        ad::Var loss = terminal_loss(g, ro);
        const double loss_v = loss.value().scalar_value();
        if (!std::isfinite(loss_v))
            throw DivergenceError("training loss became non-finite at iteration " +
                                      std::to_string(it),
                                  it, -1);

        std::vector<ad::Var> targets = ro.param_leaves;
        targets.push_back(ro.y0_leaf);
        std::vector<Tensor> grads = ad::grad_values(loss, targets);
        adam_step(st, grads, ap);

        const double u0 = st.y0.scalar_value();
        if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.max_iters)
            last_valid = validation_loss(it);
        out.history.push_back({it, loss_v, last_valid, u0, rel_err_of(u0), elapsed()});
    }

    out.u0 = st.y0.scalar_value();
    out.rel_err = rel_err_of(out.u0);
    out.elapsed_s = elapsed();
    return out;
}

U0Estimate estimate_u0(std::span<const double> run_u0s, const problems::Problem& prob) {
    U0Estimate e;
    e.runs = static_cast<int>(run_u0s.size());
    if (e.runs == 0) {
        e.mean_u0 = e.std_u0 = e.rel_l1_error = e.std_rel_err =
            std::numeric_limits<double>::quiet_NaN();
        return e;
    }
    auto mean_std = [](std::span<const double> xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        if (xs.size() > 1) {
            for (double x : xs) var += (x - mean) * (x - mean);
            var /= static_cast<double>(xs.size() - 1);
        }
        return std::pair<double, double>(mean, std::sqrt(var));
    };
    auto [mu, su] = mean_std(run_u0s);
    e.mean_u0 = mu;
    e.std_u0 = su;
    if (prob.truth) {
        std::vector<double> rels;
        rels.reserve(run_u0s.size());
        for (double u : run_u0s) rels.push_back(std::fabs(u - *prob.truth) / std::fabs(*prob.truth));
        auto [mr, sr] = mean_std(rels);
        e.rel_l1_error = mr;
        e.std_rel_err = sr;
    } else {
        e.rel_l1_error = std::numeric_limits<double>::quiet_NaN();
        e.std_rel_err = std::numeric_limits<double>::quiet_NaN();
    }
    return e;
}

} // namespace fbsde::solver
