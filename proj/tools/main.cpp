#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbsde/config.hpp"
#include "fbsde/errors.hpp"
#include "fbsde/experiment.hpp"
#include "fbsde/fbm.hpp"
#include "fbsde/networks.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/solver.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

int cmd_simulate_fbm(double hurst, int n_steps, double t_end, int dim, long paths,
                     std::uint64_t seed, const std::string& out_path) {
    auto grid = fbsde::fbm::Grid::uniform(t_end, n_steps);
    fbsde::fbm::Sampler sampler(grid, hurst, dim, seed);
    fbsde::Tensor b = sampler.sample_paths(paths);
    std::ofstream out(out_path);
    if (!out) throw fbsde::ConfigError("cannot open output file: " + out_path);
    out << "path_id,time_index,component,value\n";
    char buf[40];
    for (long p = 0; p < paths; ++p)
        for (int n = 0; n <= n_steps; ++n)
            for (int c = 0; c < dim; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", b.at3(p, n, c));
                out << p << "," << n << "," << c << "," << buf << "\n";
            }
    std::cout << "wrote " << paths << " paths (" << (n_steps + 1) << " nodes, " << dim
              << " components) to " << out_path << "\n";
    return kExitOk;
}

int cmd_price(double t, double spot, double strike, double rate, double sigma, double t_end,
              double hurst) {
    fbsde::problems::BsParams p;
    p.sigma = sigma;
    p.r = rate;
    p.strike = strike;
    const double u = fbsde::problems::bs_closed_form(t, spot, p, t_end, hurst);
    std::cout << fmt6(u) << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& save_params) {
    const auto cfg = fbsde::cli::parse_config(config_path, overrides);
    const auto prob = fbsde::cli::make_problem(cfg);
    const auto tc = fbsde::cli::make_train_config(cfg, /*run_index=*/0);
    fbsde::solver::RunResult rr = fbsde::solver::train(prob, tc);

    std::filesystem::create_directories(cfg.output_dir);
    fbsde::cli::write_history_csv(cfg.output_dir + "/history.csv", rr.history);
    if (!save_params.empty()) fbsde::nets::save_parameters(*rr.state.net, save_params);

    std::cout << "u0 = " << fmt6(rr.u0);
    if (prob.truth)
        std::cout << "  (truth " << fmt6(*prob.truth) << ", rel err " << fmt6(rr.rel_err) << ")";
    std::cout << "\n";
    std::cout << "final train loss = "
              << fmt6(rr.history.empty() ? 0.0 : rr.history.back().train_loss) << ", "
              << fmt6(rr.elapsed_s) << " s, history in " << cfg.output_dir << "/history.csv\n";
    return kExitOk;
}

int cmd_experiment(const std::string& config_path, const std::vector<std::string>& overrides) {
    const auto cfg = fbsde::cli::parse_config(config_path, overrides);
    const auto summary = fbsde::cli::run_experiment(cfg);

    std::cout << "problem=" << summary.problem << " net=" << summary.net
              << " runs=" << summary.runs << " nc=" << summary.nc_runs << "\n";
    for (const auto& oc : summary.per_run) {
        std::cout << "  run " << oc.run_index << " seed " << oc.seed << ": ";
        if (oc.nc)
            std::cout << "NC (" << oc.nc_reason << ")";
        else
            std::cout << "u0 = " << fmt6(oc.u0);
        std::cout << "\n";
    }
    std::cout << "mean_u0 = " << fmt6(summary.mean_u0) << ", std_u0 = " << fmt6(summary.std_u0);
    if (summary.truth)
        std::cout << ", rel_l1_error = " << fmt6(summary.rel_l1_error)
                  << ", std_rel_err = " << fmt6(summary.std_rel_err);
    std::cout << ", avg_runtime_s = " << fmt6(summary.avg_runtime_s) << "\n";
    std::cout << "summary written to " << cfg.output_dir << "/summary.json\n";
    return summary.nc_runs > 0 ? kExitDiverged : kExitOk;
}

int cmd_probe(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& n_list_arg) {
    const auto cfg = fbsde::cli::parse_config(config_path, overrides);
    std::vector<int> n_list;
    std::stringstream ss(n_list_arg);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) n_list.push_back(std::stoi(tok));
    const auto res = fbsde::cli::convergence_probe(cfg, n_list);
    std::cout << "n_steps  mean_u0  abs_error\n";
    for (const auto& row : res.rows)
        std::cout << row.n_steps << "  " << fmt6(row.mean_u0) << "  " << fmt6(row.abs_error)
                  << "\n";
    if (res.slope)
        std::cout << "log-log slope (error vs dt) = " << fmt6(*res.slope) << "\n";
    std::cout << "table written to " << cfg.output_dir << "/probe.csv\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Solver for fractional forward-backward SDEs driven by fBM (H > 1/2)"};
    app.require_subcommand(1);

    // simulate-fbm
    double h = 0.75, t_end = 1.0;
    int n_steps = 20, dim = 1;
    long paths = 1;
    std::uint64_t seed = 0;
    std::string out_path;
    auto* sim = app.add_subcommand("simulate-fbm", "Sample fractional Brownian paths to CSV");
    sim->set_help_flag("--help", "print help"); // frees -h for the Hurst flag
    sim->add_option("--h", h, "Hurst parameter")->required();
    sim->add_option("--n-steps", n_steps, "number of grid steps")->required();
    sim->add_option("--t", t_end, "horizon T")->required();
    sim->add_option("--dim", dim, "independent components")->required();
    sim->add_option("--paths", paths, "number of paths")->required();
    sim->add_option("--seed", seed, "RNG seed")->required();
    sim->add_option("--out", out_path, "output CSV path")->required();

    // price
    double pt = 0.0, spot = 100.0, strike = 100.0, rate = 0.06, sigma = 0.2, pt_end = 0.5,
           ph = 0.75;
    auto* price = app.add_subcommand("price", "Closed-form fractional call price");
    price->add_option("--t", pt, "valuation time");
    price->add_option("--spot", spot, "spot value x")->required();
    price->add_option("--strike", strike, "strike K")->required();
    price->add_option("--rate", rate, "interest rate r")->required();
    price->add_option("--sigma", sigma, "volatility")->required();
    price->add_option("--t-end", pt_end, "horizon T")->required();
    price->add_option("--hurst", ph, "Hurst parameter")->required();

    // config-driven subcommands
    std::string config_path, save_params, n_list_arg;
    std::vector<std::string> overrides;
    auto add_cfg = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "config file")->required();
        sub->add_option("--set", overrides, "override, key=value (repeatable)");
    };
    auto* train = app.add_subcommand("train", "Single training run");
    add_cfg(train);
    train->add_option("--save-params", save_params, "write a parameter checkpoint here");
    auto* exp = app.add_subcommand("experiment", "Multi-seed experiment with summary");
    add_cfg(exp);
    auto* probe = app.add_subcommand("convergence-probe", "Scheme error across step counts");
    add_cfg(probe);
    probe->add_option("--n-list", n_list_arg, "comma-separated step counts")->required();

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return cmd_simulate_fbm(h, n_steps, t_end, dim, paths, seed, out_path);
        if (price->parsed()) return cmd_price(pt, spot, strike, rate, sigma, pt_end, ph);
        if (train->parsed()) return cmd_train(config_path, overrides, save_params);
        if (exp->parsed()) return cmd_experiment(config_path, overrides);
        if (probe->parsed()) return cmd_probe(config_path, overrides, n_list_arg);
        return kExitConfig;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    } catch (const fbsde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fbsde::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}
