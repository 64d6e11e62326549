#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fbsde/config.hpp"
#include "fbsde/errors.hpp"
#include "fbsde/experiment.hpp"
#include "fbsde/rng.hpp"
#include "oracles.hpp"

using namespace fbsde;
using cli::ExperimentConfig;

namespace {

std::string tiny_config(const std::string& out_dir) {
    return "problem = black_scholes_1d\n"
           "net = stacked_rnn\n"
           "dim = 1\n"
           "t_end = 0.5\n"
           "n_steps = 2\n"
           "hurst = 0.75\n"
           "x0 = 100\n"
           "mu = 0.06\n"
           "sigma = 0.2\n"
           "r = 0.06\n"
           "strike = 100\n"
           "lr = 0.005\n"
           "max_iters = 0\n"
           "batch_size = 4\n"
           "valid_size = 4\n"
           "runs = 1\n"
           "base_seed = 11\n"
           "y0_min = 5\n"
           "y0_max = 9\n"
           "wick_correction = true\n"
           "output_dir = " +
           out_dir + "\n";
}

std::filesystem::path fresh_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("fbsde_cli_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("bundled fractional config parses to the experiment defaults") {
    const auto cfg = cli::parse_config(std::string(FBSDE_SOURCE_DIR) + "/configs/bs1d_h075.cfg");
    CHECK(cfg.t_end == 0.5);
    CHECK(cfg.n_steps == 20);
    CHECK(cfg.lr == 0.005);
    CHECK(cfg.valid_size == 256);
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.hurst == 0.75);
    CHECK(cfg.wick_correction);
}

TEST_CASE("all bundled configs parse") {
    for (const char* name :
         {"bs1d_h05.cfg", "bs1d_h075.cfg", "bs1d_h075_lstm.cfg", "bs50d_h05.cfg",
          "bs50d_h075.cfg", "two_rates_100d.cfg", "heat_50d.cfg", "smoke_10d.cfg"}) {
        CHECK_NOTHROW(cli::parse_config(std::string(FBSDE_SOURCE_DIR) + "/configs/" + name));
    }
}

TEST_CASE("hurst one half with the correction on is rejected") {
    std::string text = tiny_config("out");
    text += "\n";
    // flip hurst to 0.5 while keeping the correction on
    const std::string ov[] = {std::string("hurst=0.5")};
    CHECK_THROWS_AS(cli::parse_config_text(text, ov), ConfigError);
}

TEST_CASE("empty config is rejected with the missing keys listed") {
    try {
        cli::parse_config_text("");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("y0_min") != std::string::npos);
        CHECK(msg.find("problem") != std::string::npos);
    }
}

TEST_CASE("unknown, duplicate, and inapplicable keys are rejected") {
    CHECK_THROWS_AS(cli::parse_config_text(tiny_config("out") + "swirl = 3\n"), ConfigError);
    CHECK_THROWS_AS(cli::parse_config_text(tiny_config("out") + "lr = 0.001\n"), ConfigError);
    // two_rates keys on a Black-Scholes problem
    CHECK_THROWS_AS(cli::parse_config_text(tiny_config("out") + "r_l = 0.04\n"), ConfigError);
}

TEST_CASE("missing y0 bracket names the key") {
    std::string text = tiny_config("out");
    const auto pos = text.find("y0_min = 5\n");
    text.erase(pos, std::string("y0_min = 5\n").size());
    try {
        cli::parse_config_text(text);
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("y0_min") != std::string::npos);
    }
}

TEST_CASE("emit and parse round-trip") {
    const auto base = cli::parse_config_text(tiny_config("some/dir"));
    const auto again = cli::parse_config_text(cli::emit_config(base));
    CHECK(base == again);

    auto heat = cli::parse_config(std::string(FBSDE_SOURCE_DIR) + "/configs/heat_50d.cfg");
    CHECK(heat == cli::parse_config_text(cli::emit_config(heat)));
}

TEST_CASE("overrides replace file values") {
    const std::string ov[] = {std::string("lr=0.25"), std::string("net=lstm")};
    const auto cfg = cli::parse_config_text(tiny_config("out"), ov);
    CHECK(cfg.lr == 0.25);
    CHECK(cfg.net == "lstm");
}

TEST_CASE("zero-iteration experiment reports the y0 initialization") {
    const auto dir = fresh_dir("zero_iters");
    const auto cfg = cli::parse_config_text(tiny_config(dir.string()));
    const auto summary = cli::run_experiment(cfg);
    rng::Stream y0s(cfg.base_seed, 0x7930);
    CHECK(summary.mean_u0 == y0s.uniform_in(0, 5.0, 9.0));
    CHECK(summary.std_u0 == 0.0);
    CHECK(summary.nc_runs == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("experiment reruns are numerically identical") {
    const auto dir1 = fresh_dir("det1");
    const auto dir2 = fresh_dir("det2");
    const std::string ov1[] = {std::string("max_iters=6"), std::string("runs=2"),
                               std::string("eval_every=3")};
    auto cfg1 = cli::parse_config_text(tiny_config(dir1.string()), ov1);
    auto cfg2 = cfg1;
    cfg2.output_dir = dir2.string();
    const auto s1 = cli::run_experiment(cfg1);
    const auto s2 = cli::run_experiment(cfg2);
    // Wall-clock fields are exempt; every numeric result must match bitwise.
    CHECK(s1.mean_u0 == s2.mean_u0);
    CHECK(s1.std_u0 == s2.std_u0);
    CHECK(s1.rel_l1_error == s2.rel_l1_error);
    REQUIRE(s1.per_run.size() == s2.per_run.size());
    for (std::size_t k = 0; k < s1.per_run.size(); ++k) {
        CHECK(s1.per_run[k].u0 == s2.per_run[k].u0);
        REQUIRE(s1.per_run[k].history.size() == s2.per_run[k].history.size());
        for (std::size_t i = 0; i < s1.per_run[k].history.size(); ++i) {
            CHECK(s1.per_run[k].history[i].train_loss == s2.per_run[k].history[i].train_loss);
            CHECK(s1.per_run[k].history[i].u0 == s2.per_run[k].history[i].u0);
        }
    }
    std::filesystem::remove_all(dir1);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("summary statistics equal a brute-force recomputation from the CSVs") {
    const auto dir = fresh_dir("stats");
    const std::string ov[] = {std::string("max_iters=5"), std::string("runs=3")};
    const auto cfg = cli::parse_config_text(tiny_config(dir.string()), ov);
    const auto summary = cli::run_experiment(cfg);

    std::vector<double> u0s;
    for (int k = 0; k < cfg.runs; ++k) {
        std::ifstream in(dir / ("run_" + std::to_string(k) + ".csv"));
        REQUIRE(in.good());
        std::string line, header, last;
        std::getline(in, header);
        CHECK(header == "iteration,train_loss,valid_loss,u0,rel_err,elapsed_s");
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        // u0 is the fourth column
        std::stringstream ss(last);
        std::string tok;
        for (int c = 0; c < 4; ++c) std::getline(ss, tok, ',');
        u0s.push_back(std::stod(tok));
    }
    const double mean = oracles::mean(u0s);
    const double stdv = std::sqrt(oracles::sample_var(u0s));
    CHECK(std::fabs(summary.mean_u0 - mean) <= 1e-12);
    CHECK(std::fabs(summary.std_u0 - stdv) <= 1e-12);
    std::filesystem::remove_all(dir);
}

TEST_CASE("summary json carries the table fields") {
    const auto dir = fresh_dir("json");
    const auto cfg = cli::parse_config_text(tiny_config(dir.string()));
    const auto summary = cli::run_experiment(cfg);
    const std::string json = cli::summary_to_json(summary);
    for (const char* key :
         {"mean_u0", "std_u0", "rel_l1_error", "std_rel_err", "avg_runtime_s", "per_run"})
        CHECK(json.find(key) != std::string::npos);
    std::ifstream in(dir / "summary.json");
    CHECK(in.good());
    std::filesystem::remove_all(dir);
}

TEST_CASE("a run that never stabilizes is marked NC and excluded") {
    const auto dir = fresh_dir("nc");
    // An absurdly tight stability window forces the NC classification.
    const std::string ov[] = {std::string("max_iters=30"), std::string("runs=2"),
                              std::string("nc_range_threshold=1e-15")};
    const auto cfg = cli::parse_config_text(tiny_config(dir.string()), ov);
    const auto summary = cli::run_experiment(cfg);
    CHECK(summary.nc_runs == 2);
    CHECK(std::isnan(summary.mean_u0));
    const std::string json = cli::summary_to_json(summary);
    CHECK(json.find("NC") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("convergence probe: rows, nonnegative errors, slope arity") {
    const auto dir = fresh_dir("probe");
    const std::string ov[] = {std::string("max_iters=4")};
    const auto cfg = cli::parse_config_text(tiny_config(dir.string()), ov);

    const auto one = cli::convergence_probe(cfg, {5});
    CHECK(one.rows.size() == 1);
    CHECK(one.rows[0].abs_error >= 0.0);
    CHECK(!one.slope.has_value());

    const auto three = cli::convergence_probe(cfg, {4, 8, 16});
    CHECK(three.rows.size() == 3);
    for (const auto& row : three.rows) CHECK(row.abs_error >= 0.0);
    CHECK(three.slope.has_value());
    std::ifstream in(dir / "probe.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "n_steps,mean_u0,abs_error");
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
