#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "fbsde/problems.hpp"
#include "fbsde/solver.hpp"

namespace fbsde::cli {

// Flat key=value experiment description. '#' starts a comment; keys outside
// the documented vocabulary, duplicates, and missing mandatory keys are all
// rejected. Command-line overrides are further key=value pairs applied after
// the file.
struct ExperimentConfig {
    std::string problem;
    std::string net = "stacked_rnn";
    int layers = 2;

    int dim = 0;
    double t_end = 0.0;
    int n_steps = 0;
    double hurst = 0.0;
    double x0 = 0.0;
    double mu = 0.0, sigma = 0.0, r = 0.0, r_l = 0.0, r_b = 0.0, strike = 0.0;

    double lr = 0.0;
    long max_iters = 0;
    int batch_size = 0;
    int valid_size = 0;
    int eval_every = 100;
    int runs = 0;
    std::uint64_t base_seed = 0;
    double y0_min = 0.0, y0_max = 0.0;

    bool wick_correction = true;
    bool stop_gradient_correction = false;
    bool full_jacobian_correction = false;

    std::string output_dir;
    std::optional<double> reference_u0;
    double nc_range_threshold = 0.10;
    double ln_gamma_min = 0.9, ln_gamma_max = 1.1, ln_beta_std = 0.1;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config_text(const std::string& text,
                                   std::span<const std::string> overrides = {});
ExperimentConfig parse_config(const std::string& path,
                              std::span<const std::string> overrides = {});
std::string emit_config(const ExperimentConfig& cfg);

problems::Problem make_problem(const ExperimentConfig& cfg);
solver::TrainConfig make_train_config(const ExperimentConfig& cfg, int run_index);

} // namespace fbsde::cli
