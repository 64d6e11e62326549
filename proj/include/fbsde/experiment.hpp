#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fbsde/config.hpp"
#include "fbsde/solver.hpp"

namespace fbsde::cli {

struct RunOutcome {
    int run_index = 0;
    std::uint64_t seed = 0;
    bool nc = false;
    std::string nc_reason;
    double u0 = 0.0;      // meaningless when nc
    double rel_err = 0.0; // NaN when no truth
    double runtime_s = 0.0;
    std::vector<solver::HistoryRow> history;
};

struct ExperimentSummary {
    std::string problem, net;
    int runs = 0;
    int nc_runs = 0;
    double mean_u0 = 0.0;
    double std_u0 = 0.0;
    double rel_l1_error = 0.0;
    double std_rel_err = 0.0;
    double avg_runtime_s = 0.0;
    std::optional<double> truth;
    std::vector<RunOutcome> per_run;
};

// The runs of one experiment, dispatched to a small worker pool. Outcomes
// are ordered by run index; a diverging or non-stabilizing run is marked NC
// and excluded from the aggregates.
std::vector<RunOutcome> execute_runs(const ExperimentConfig& cfg);

ExperimentSummary summarize_runs(const ExperimentConfig& cfg, std::vector<RunOutcome> outcomes);

// execute + summarize + write per-run CSVs and summary.json into output_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg);

void write_history_csv(const std::string& path, const std::vector<solver::HistoryRow>& history);
std::string summary_to_json(const ExperimentSummary& s);

struct ProbeRow {
    int n_steps = 0;
    double mean_u0 = 0.0;
    double abs_error = 0.0;
};

struct ProbeResult {
    std::vector<ProbeRow> rows;
    std::optional<double> slope; // of log error against log dt, >= 3 points
};

// Scheme-error probe over a list of step counts; needs a problem with a
// known or configured reference value. Writes probe.csv into output_dir.
ProbeResult convergence_probe(const ExperimentConfig& cfg, const std::vector<int>& n_list);

} // namespace fbsde::cli
