#include "fbsde/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fbsde/errors.hpp"

namespace fbsde::cli {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// A run counts as NC when its loss diverged or when u0 failed to stabilize:
// the range of the trailing window exceeds the configured fraction of its
// mean magnitude.
std::optional<std::string> nc_by_range(const std::vector<solver::HistoryRow>& history,
                                       double threshold) {
    if (history.size() < 2) return std::nullopt;
    const std::size_t window = std::min<std::size_t>(500, history.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    double mean = 0.0;
    for (std::size_t i = history.size() - window; i < history.size(); ++i) {
        const double u = history[i].u0;
        if (!std::isfinite(u)) return "non-finite u0";
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        mean += u;
    }
    mean /= static_cast<double>(window);
    if (hi - lo > threshold * std::fabs(mean)) {
        return "u0 range " + fmt17(hi - lo) + " over the last " + std::to_string(window) +
               " iterations exceeds " + fmt17(threshold) + " of |mean| " + fmt17(std::fabs(mean));
    }
    return std::nullopt;
}

} // namespace

std::vector<RunOutcome> execute_runs(const ExperimentConfig& cfg) {
    const problems::Problem prob = make_problem(cfg);
    std::vector<RunOutcome> outcomes(static_cast<std::size_t>(cfg.runs));

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned workers = std::min<unsigned>(static_cast<unsigned>(cfg.runs), hw);

    std::mutex next_mutex;
    int next_run = 0;
    auto worker = [&]() {
        for (;;) {
            int k;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (next_run >= cfg.runs) return;
                k = next_run++;
            }
            RunOutcome& oc = outcomes[static_cast<std::size_t>(k)];
            oc.run_index = k;
            const auto tc = make_train_config(cfg, k);
            oc.seed = tc.seed;
            try {
                solver::RunResult rr = solver::train(prob, tc);
                oc.u0 = rr.u0;
                oc.rel_err = rr.rel_err;
                oc.runtime_s = rr.elapsed_s;
                oc.history = std::move(rr.history);
                if (auto reason = nc_by_range(oc.history, cfg.nc_range_threshold)) {
                    oc.nc = true;
                    oc.nc_reason = *reason;
                }
            } catch (const DivergenceError& e) {
                oc.nc = true;
                oc.nc_reason = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    for (unsigned w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return outcomes;
}

ExperimentSummary summarize_runs(const ExperimentConfig& cfg, std::vector<RunOutcome> outcomes) {
    ExperimentSummary s;
    s.problem = cfg.problem;
    s.net = cfg.net;
    s.runs = cfg.runs;
    s.truth = make_problem(cfg).truth;

    std::vector<double> u0s;
    double runtime = 0.0;
    int completed = 0;
    for (const auto& oc : outcomes) {
        if (oc.nc) {
            ++s.nc_runs;
        } else {
            u0s.push_back(oc.u0);
        }
        if (!oc.history.empty() || !oc.nc) {
            runtime += oc.runtime_s;
            ++completed;
        }
    }
    const problems::Problem prob = make_problem(cfg);
    const auto est = solver::estimate_u0(u0s, prob);
    s.mean_u0 = est.mean_u0;
    s.std_u0 = est.std_u0;
    s.rel_l1_error = est.rel_l1_error;
    s.std_rel_err = est.std_rel_err;
    s.avg_runtime_s = completed > 0 ? runtime / completed : 0.0;
    s.per_run = std::move(outcomes);
    return s;
}

void write_history_csv(const std::string& path, const std::vector<solver::HistoryRow>& history) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open history file for writing: " + path);
    out << "iteration,train_loss,valid_loss,u0,rel_err,elapsed_s\n";
    for (const auto& row : history) {
        out << row.iteration << "," << fmt17(row.train_loss) << "," << fmt17(row.valid_loss)
            << "," << fmt17(row.u0) << "," << fmt17(row.rel_err) << "," << fmt17(row.elapsed_s)
            << "\n";
    }
}

std::string summary_to_json(const ExperimentSummary& s) {
    nlohmann::json j;
    j["problem"] = s.problem;
    j["net"] = s.net;
    j["runs"] = s.runs;
    j["nc_runs"] = s.nc_runs;
    j["mean_u0"] = s.mean_u0;
    j["std_u0"] = s.std_u0;
    j["rel_l1_error"] = s.rel_l1_error;
    j["std_rel_err"] = s.std_rel_err;
    j["avg_runtime_s"] = s.avg_runtime_s;
    if (s.truth)
        j["truth"] = *s.truth;
    else
        j["truth"] = nullptr;
    auto runs = nlohmann::json::array();
    for (const auto& oc : s.per_run) {
        nlohmann::json r;
        r["run"] = oc.run_index;
        r["seed"] = oc.seed;
        if (oc.nc) {
            r["u0"] = "NC";
            r["nc_reason"] = oc.nc_reason;
        } else {
            r["u0"] = oc.u0;
            r["rel_err"] = oc.rel_err;
        }
        r["runtime_s"] = oc.runtime_s;
        runs.push_back(r);
    }
    j["per_run"] = runs;
    return j.dump(2) + "\n";
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    ExperimentSummary s = summarize_runs(cfg, execute_runs(cfg));
    for (const auto& oc : s.per_run) {
        if (oc.history.empty()) continue;
        write_history_csv(cfg.output_dir + "/run_" + std::to_string(oc.run_index) + ".csv",
                          oc.history);
    }
    std::ofstream out(cfg.output_dir + "/summary.json");
    if (!out) throw ConfigError("cannot write summary.json in " + cfg.output_dir);
    out << summary_to_json(s);
    return s;
}

ProbeResult convergence_probe(const ExperimentConfig& cfg, const std::vector<int>& n_list) {
    if (n_list.empty()) throw ConfigError("convergence probe needs at least one step count");
    const problems::Problem prob = make_problem(cfg);
    if (!prob.truth)
        throw ConfigError("convergence probe needs a problem with a known or configured truth");
    const double truth = *prob.truth;

    ProbeResult res;
    for (int n : n_list) {
        ExperimentConfig sub = cfg;
        sub.n_steps = n;
        auto outcomes = execute_runs(sub);
        std::vector<double> u0s;
        for (const auto& oc : outcomes)
            if (!oc.nc) u0s.push_back(oc.u0);
        if (u0s.empty())
            throw DivergenceError("all probe runs at n_steps = " + std::to_string(n) +
                                      " were NC",
                                  -1, -1);
        double mean = 0.0;
        for (double u : u0s) mean += u;
        mean /= static_cast<double>(u0s.size());
        res.rows.push_back({n, mean, std::fabs(mean - truth)});
    }

    if (res.rows.size() >= 3) {
        // Least squares of log error against log dt.
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int count = 0;
        for (const auto& row : res.rows) {
            if (!(row.abs_error > 0.0)) continue;
            const double lx = std::log(cfg.t_end / row.n_steps);
            const double ly = std::log(row.abs_error);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            ++count;
        }
        if (count >= 3) {
            const double denom = count * sxx - sx * sx;
            if (denom != 0.0) res.slope = (count * sxy - sx * sy) / denom;
        }
    }

    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    std::ofstream out(cfg.output_dir + "/probe.csv");
    if (!out) throw ConfigError("cannot write probe.csv in " + cfg.output_dir);
    out << "n_steps,mean_u0,abs_error\n";
    for (const auto& row : res.rows)
        out << row.n_steps << "," << fmt17(row.mean_u0) << "," << fmt17(row.abs_error) << "\n";
    return res;
}

} // namespace fbsde::cli
