#include "fbsde/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fbsde/errors.hpp"

namespace fbsde::cli {

namespace {

const std::set<std::string> kAllKeys = {
    "problem",        "net",           "layers",          "dim",
    "t_end",          "n_steps",       "hurst",           "x0",
    "mu",             "sigma",         "r",               "r_l",
    "r_b",            "strike",        "lr",              "max_iters",
    "batch_size",     "valid_size",    "eval_every",      "runs",
    "base_seed",      "y0_min",        "y0_max",          "wick_correction",
    "stop_gradient_correction", "full_jacobian_correction", "output_dir",
    "reference_u0",   "nc_range_threshold", "ln_gamma_min", "ln_gamma_max",
    "ln_beta_std",
};

const std::set<std::string> kMandatory = {
    "problem",    "net",       "dim",        "t_end",   "n_steps", "hurst",
    "x0",         "lr",        "max_iters",  "batch_size", "valid_size",
    "runs",       "base_seed", "y0_min",     "y0_max",  "wick_correction",
    "output_dir",
};

// Coefficient keys each problem consumes; anything else from this group is
// rejected for that problem.
const std::set<std::string> kCoefKeys = {"mu", "sigma", "r", "r_l", "r_b", "strike"};

std::set<std::string> coef_keys_for(const std::string& problem) {
    if (problem == "black_scholes_1d" || problem == "black_scholes_maxcall")
        return {"mu", "sigma", "r", "strike"};
    if (problem == "two_rates_spread") return {"mu", "sigma", "r_l", "r_b"};
    if (problem == "semilinear_heat") return {};
    throw ConfigError("unknown problem '" + problem + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

using KvMap = std::map<std::string, std::string>;

void insert_kv(KvMap& kv, const std::string& entry, const char* origin) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos)
        throw ConfigError(std::string(origin) + " entry is not key=value: '" + entry + "'");
    const std::string key = trim(entry.substr(0, eq));
    const std::string value = trim(entry.substr(eq + 1));
    if (!kAllKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
    if (value.empty()) throw ConfigError("config key '" + key + "' has an empty value");
    kv[key] = value; // overrides replace earlier values
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not a number: '" + v + "'");
    }
    if (pos != v.size())
        throw ConfigError("config key '" + key + "' has trailing characters: '" + v + "'");
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long out;
    try {
        out = std::stoll(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer: '" + v + "'");
    }
    if (pos != v.size())
        throw ConfigError("config key '" + key + "' has trailing characters: '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config key '" + key + "' must be true or false, got '" + v + "'");
}

ExperimentConfig from_map(const KvMap& kv) {
    std::string missing;
    for (const auto& k : kMandatory)
        if (!kv.count(k)) missing += missing.empty() ? k : ", " + k;
    if (!missing.empty()) throw ConfigError("missing mandatory config keys: " + missing);

    ExperimentConfig c;
    c.problem = kv.at("problem");
    c.net = kv.at("net");
    c.dim = static_cast<int>(parse_int("dim", kv.at("dim")));
    c.t_end = parse_double("t_end", kv.at("t_end"));
    c.n_steps = static_cast<int>(parse_int("n_steps", kv.at("n_steps")));
    c.hurst = parse_double("hurst", kv.at("hurst"));
    c.x0 = parse_double("x0", kv.at("x0"));
    c.lr = parse_double("lr", kv.at("lr"));
    c.max_iters = parse_int("max_iters", kv.at("max_iters"));
    c.batch_size = static_cast<int>(parse_int("batch_size", kv.at("batch_size")));
    c.valid_size = static_cast<int>(parse_int("valid_size", kv.at("valid_size")));
    c.runs = static_cast<int>(parse_int("runs", kv.at("runs")));
    c.base_seed = static_cast<std::uint64_t>(parse_int("base_seed", kv.at("base_seed")));
    c.y0_min = parse_double("y0_min", kv.at("y0_min"));
    c.y0_max = parse_double("y0_max", kv.at("y0_max"));
    c.wick_correction = parse_bool("wick_correction", kv.at("wick_correction"));
    c.output_dir = kv.at("output_dir");

    auto opt_int = [&](const char* k, int def) {
        return kv.count(k) ? static_cast<int>(parse_int(k, kv.at(k))) : def;
    };
    auto opt_double = [&](const char* k, double def) {
        return kv.count(k) ? parse_double(k, kv.at(k)) : def;
    };
    auto opt_bool = [&](const char* k, bool def) {
        return kv.count(k) ? parse_bool(k, kv.at(k)) : def;
    };
    c.layers = opt_int("layers", 2);
    c.eval_every = opt_int("eval_every", 100);
    c.stop_gradient_correction = opt_bool("stop_gradient_correction", false);
    c.full_jacobian_correction = opt_bool("full_jacobian_correction", false);
    c.nc_range_threshold = opt_double("nc_range_threshold", 0.10);
    c.ln_gamma_min = opt_double("ln_gamma_min", 0.9);
    c.ln_gamma_max = opt_double("ln_gamma_max", 1.1);
    c.ln_beta_std = opt_double("ln_beta_std", 0.1);
    if (kv.count("reference_u0")) c.reference_u0 = parse_double("reference_u0", kv.at("reference_u0"));

    const auto needed = coef_keys_for(c.problem);
    for (const auto& k : kCoefKeys) {
        const bool present = kv.count(k) > 0;
        const bool wanted = needed.count(k) > 0;
        if (wanted && !present)
            throw ConfigError("problem '" + c.problem + "' requires config key '" + k + "'");
        if (!wanted && present)
            throw ConfigError("config key '" + k + "' does not apply to problem '" + c.problem +
                              "'");
    }
    if (needed.count("mu")) c.mu = parse_double("mu", kv.at("mu"));
    if (needed.count("sigma")) c.sigma = parse_double("sigma", kv.at("sigma"));
    if (needed.count("r")) c.r = parse_double("r", kv.at("r"));
    if (needed.count("r_l")) c.r_l = parse_double("r_l", kv.at("r_l"));
    if (needed.count("r_b")) c.r_b = parse_double("r_b", kv.at("r_b"));
    if (needed.count("strike")) c.strike = parse_double("strike", kv.at("strike"));

    // Cross-field validation.
    if (c.net != "stacked_rnn" && c.net != "lstm")
        throw ConfigError("net must be stacked_rnn or lstm, got '" + c.net + "'");
    if (c.layers < 2) throw ConfigError("layers must be >= 2");
    if (c.dim < 1) throw ConfigError("dim must be >= 1");
    if (c.problem == "black_scholes_1d" && c.dim != 1)
        throw ConfigError("black_scholes_1d requires dim = 1");
    if (!(c.t_end > 0.0)) throw ConfigError("t_end must be positive");
    if (c.n_steps < 1) throw ConfigError("n_steps must be >= 1");
    if (!(c.hurst >= 0.5 && c.hurst <= 1.0))
        throw ConfigError("hurst must lie in [0.5, 1]");
    if (c.hurst == 0.5 && c.wick_correction)
        throw ConfigError("hurst = 0.5 requires wick_correction = false");
    if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
    if (c.max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.valid_size < 1) throw ConfigError("valid_size must be >= 1");
    if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (c.runs < 1) throw ConfigError("runs must be >= 1");
    if (!(c.y0_min <= c.y0_max)) throw ConfigError("y0_min must not exceed y0_max");
    if (needed.count("sigma") && !(c.sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (needed.count("strike") && !(c.strike > 0.0)) throw ConfigError("strike must be positive");
    if (needed.count("r_l") && !(c.r_l <= c.r_b))
        throw ConfigError("r_l must not exceed r_b");
    if (!(c.nc_range_threshold > 0.0)) throw ConfigError("nc_range_threshold must be positive");
    if (!(c.ln_gamma_min <= c.ln_gamma_max))
        throw ConfigError("ln_gamma_min must not exceed ln_gamma_max");
    return c;
}

} // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   std::span<const std::string> overrides) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line is not key=value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        if (kv.count(key)) throw ConfigError("duplicate config key '" + key + "'");
        insert_kv(kv, line, "config");
    }
    for (const auto& ov : overrides) insert_kv(kv, ov, "override");
    return from_map(kv);
}

ExperimentConfig parse_config(const std::string& path, std::span<const std::string> overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string emit_config(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "problem = " << c.problem << "\n";
    out << "net = " << c.net << "\n";
    out << "layers = " << c.layers << "\n";
    out << "dim = " << c.dim << "\n";
    out << "t_end = " << fmt(c.t_end) << "\n";
    out << "n_steps = " << c.n_steps << "\n";
    out << "hurst = " << fmt(c.hurst) << "\n";
    out << "x0 = " << fmt(c.x0) << "\n";
    const auto needed = coef_keys_for(c.problem);
    if (needed.count("mu")) out << "mu = " << fmt(c.mu) << "\n";
    if (needed.count("sigma")) out << "sigma = " << fmt(c.sigma) << "\n";
    if (needed.count("r")) out << "r = " << fmt(c.r) << "\n";
    if (needed.count("r_l")) out << "r_l = " << fmt(c.r_l) << "\n";
    if (needed.count("r_b")) out << "r_b = " << fmt(c.r_b) << "\n";
    if (needed.count("strike")) out << "strike = " << fmt(c.strike) << "\n";
    out << "lr = " << fmt(c.lr) << "\n";
    out << "max_iters = " << c.max_iters << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "valid_size = " << c.valid_size << "\n";
    out << "eval_every = " << c.eval_every << "\n";
    out << "runs = " << c.runs << "\n";
    out << "base_seed = " << c.base_seed << "\n";
    out << "y0_min = " << fmt(c.y0_min) << "\n";
    out << "y0_max = " << fmt(c.y0_max) << "\n";
    out << "wick_correction = " << (c.wick_correction ? "true" : "false") << "\n";
    out << "stop_gradient_correction = " << (c.stop_gradient_correction ? "true" : "false")
        << "\n";
    out << "full_jacobian_correction = " << (c.full_jacobian_correction ? "true" : "false")
        << "\n";
    out << "output_dir = " << c.output_dir << "\n";
    if (c.reference_u0) out << "reference_u0 = " << fmt(*c.reference_u0) << "\n";
    out << "nc_range_threshold = " << fmt(c.nc_range_threshold) << "\n";
    out << "ln_gamma_min = " << fmt(c.ln_gamma_min) << "\n";
    out << "ln_gamma_max = " << fmt(c.ln_gamma_max) << "\n";
    out << "ln_beta_std = " << fmt(c.ln_beta_std) << "\n";
    return out.str();
}

problems::Problem make_problem(const ExperimentConfig& cfg) {
    problems::ProblemSpec spec;
    spec.name = cfg.problem;
    spec.dim = cfg.dim;
    spec.t_end = cfg.t_end;
    spec.hurst = cfg.hurst;
    spec.x0 = cfg.x0;
    spec.bs = {cfg.mu, cfg.sigma, cfg.r, cfg.strike, cfg.r_l, cfg.r_b};
    spec.wick_correction = cfg.wick_correction;
    problems::Problem prob = problems::make_problem(spec);
    if (cfg.reference_u0) prob.truth = *cfg.reference_u0;
    return prob;
}

solver::TrainConfig make_train_config(const ExperimentConfig& cfg, int run_index) {
    solver::TrainConfig tc;
    tc.net_kind = cfg.net;
    tc.layers = cfg.layers;
    tc.n_steps = cfg.n_steps;
    tc.t_end = cfg.t_end;
    tc.batch_size = cfg.batch_size;
    tc.valid_size = cfg.valid_size;
    tc.max_iters = cfg.max_iters;
    tc.eval_every = cfg.eval_every;
    tc.lr = cfg.lr;
    tc.y0_min = cfg.y0_min;
    tc.y0_max = cfg.y0_max;
    tc.seed = cfg.base_seed + static_cast<std::uint64_t>(run_index);
    tc.rollout.wick_correction = cfg.wick_correction;
    tc.rollout.stop_gradient_correction = cfg.stop_gradient_correction;
    tc.rollout.full_jacobian = cfg.full_jacobian_correction;
    tc.net_init.ln_gamma_min = cfg.ln_gamma_min;
    tc.net_init.ln_gamma_max = cfg.ln_gamma_max;
    tc.net_init.ln_beta_std = cfg.ln_beta_std;
    return tc;
}

} // namespace fbsde::cli
