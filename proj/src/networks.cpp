#include "fbsde/networks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "fbsde/errors.hpp"
#include "fbsde/rng.hpp"

namespace fbsde::nets {

namespace {

Tensor xavier_uniform(std::int64_t fan_in, std::int64_t fan_out, const rng::Stream& s,
                      std::uint64_t& counter) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (auto& v : t.values()) v = s.uniform_in(counter++, -bound, bound);
    return t;
}

// Householder QR of a Gaussian square matrix; columns sign-corrected by the
// diagonal of R so the factor is a deterministic orthogonal matrix.
Tensor orthogonal(std::int64_t n, const rng::Stream& s, std::uint64_t& counter) {
    Tensor r({n, n});
    for (auto& v : r.values()) v = s.normal(counter++);

    std::vector<std::vector<double>> reflectors;
    reflectors.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) {
        double norm2 = 0.0;
        for (std::int64_t i = k; i < n; ++i) norm2 += r(i, k) * r(i, k);
        const double norm = std::sqrt(norm2);
        std::vector<double> v(static_cast<std::size_t>(n - k), 0.0);
        if (norm > 0.0) {
            const double alpha = r(k, k) > 0.0 ? -norm : norm;
            v[0] = r(k, k) - alpha;
            for (std::int64_t i = k + 1; i < n; ++i) v[static_cast<std::size_t>(i - k)] = r(i, k);
            double vn2 = 0.0;
            for (double x : v) vn2 += x * x;
            const double vn = std::sqrt(vn2);
            if (vn > 0.0)
                for (double& x : v) x /= vn;
            for (std::int64_t j = k; j < n; ++j) {
                double dot = 0.0;
                for (std::int64_t i = k; i < n; ++i) dot += v[static_cast<std::size_t>(i - k)] * r(i, j);
                for (std::int64_t i = k; i < n; ++i) r(i, j) -= 2.0 * dot * v[static_cast<std::size_t>(i - k)];
            }
        }
        reflectors.push_back(std::move(v));
    }

    Tensor q({n, n});
    for (std::int64_t i = 0; i < n; ++i) q(i, i) = 1.0;
    for (std::int64_t k = n - 1; k >= 0; --k) {
        const auto& v = reflectors[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::int64_t i = k; i < n; ++i) dot += v[static_cast<std::size_t>(i - k)] * q(i, j);
            for (std::int64_t i = k; i < n; ++i) q(i, j) -= 2.0 * dot * v[static_cast<std::size_t>(i - k)];
        }
    }
    for (std::int64_t k = 0; k < n; ++k)
        if (r(k, k) < 0.0)
            for (std::int64_t i = 0; i < n; ++i) q(i, k) = -q(i, k);
    return q;
}

Tensor ln_gamma(std::int64_t width, const NetworkInit& init, const rng::Stream& s,
                std::uint64_t& counter) {
    Tensor t({1, width});
    for (auto& v : t.values()) v = s.uniform_in(counter++, init.ln_gamma_min, init.ln_gamma_max);
    return t;
}

Tensor ln_beta(std::int64_t width, const NetworkInit& init, const rng::Stream& s,
               std::uint64_t& counter) {
    Tensor t({1, width});
    for (auto& v : t.values()) v = init.ln_beta_std * s.normal(counter++);
    return t;
}

} // namespace

Network::Network(int dim, int layers, const NetworkInit& init)
    : dim_(dim), layers_(layers), init_(init) {
    if (dim < 1) throw ConfigError("network input width must be >= 1");
    if (layers < 2) throw ConfigError("network needs at least two hidden layers");
}

std::size_t Network::add_param(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
}

std::int64_t Network::trainable_scalars() const {
    std::int64_t n = 0;
    for (const auto& t : values_) n += t.numel();
    return n;
}

Network::SeqForward Network::forward(ad::Graph& g, const Tensor& x_seq, int n_steps) const {
    if (x_seq.rank() != 3)
        throw ShapeError("network forward needs [m x T x d] inputs, got " + x_seq.shape_str());
    if (x_seq.dim(2) != dim_)
        throw ShapeError("input feature width " + std::to_string(x_seq.dim(2)) +
                         " does not match network width " + std::to_string(dim_));
    const int total = static_cast<int>(x_seq.dim(1));
    if (n_steps < 0) n_steps = total;
    if (n_steps > total) throw ShapeError("n_steps exceeds the input sequence length");

    SeqForward out;
    out.params.reserve(values_.size());
    for (const auto& t : values_) out.params.push_back(g.leaf(t));
    out.x.reserve(static_cast<std::size_t>(n_steps));
    for (int n = 0; n < n_steps; ++n) out.x.push_back(g.constant(x_seq.time_slice(n)));
    out.z = unroll(g, out.x, out.params);
    return out;
}

StackedRnn::StackedRnn(int dim, int layers, const NetworkInit& init)
    : Network(dim, layers, init) {
    rng::Stream s(init.seed, /*stream=*/0x6e657473);
    std::uint64_t c = 0;
    const std::int64_t h = hidden_width();
    std::int64_t in = dim;
    for (int l = 0; l < layers; ++l) {
        Layer lay;
        lay.u = add_param("u" + std::to_string(l + 1), xavier_uniform(in, h, s, c));
        lay.w = add_param("w" + std::to_string(l + 1), orthogonal(h, s, c));
        lay.b = add_param("b" + std::to_string(l + 1), Tensor({1, h}));
        lay.gamma = add_param("ln" + std::to_string(l + 1) + "_gamma", ln_gamma(h, init, s, c));
        lay.beta = add_param("ln" + std::to_string(l + 1) + "_beta", ln_beta(h, init, s, c));
        hidden_.push_back(lay);
        in = h;
    }
    out_gamma_ = add_param("ln_out_gamma", ln_gamma(h, init, s, c));
    out_beta_ = add_param("ln_out_beta", ln_beta(h, init, s, c));
    u_out_ = add_param("u_out", xavier_uniform(h, dim, s, c));
    w_out_ = add_param("w_out", orthogonal(dim, s, c));
    b_out_ = add_param("b_out", Tensor({1, dim}));
}

std::vector<ad::Var> StackedRnn::unroll(ad::Graph& g, std::span<const ad::Var> x_steps,
                                        std::span<const ad::Var> p) const {
    const std::int64_t m = x_steps.empty() ? 1 : x_steps[0].value().rows();
    const std::int64_t h = hidden_width();

    std::vector<ad::Var> h_prev(hidden_.size(), g.constant(Tensor::zeros({m, h})));
    ad::Var z_prev = g.constant(Tensor::zeros({m, dim_}));

    std::vector<ad::Var> z;
    z.reserve(x_steps.size());
    for (const ad::Var& xn : x_steps) {
        ad::Var in = xn;
        for (std::size_t l = 0; l < hidden_.size(); ++l) {
            const Layer& lay = hidden_[l];
            ad::Var pre = ad::matmul(in, p[lay.u]) + ad::matmul(h_prev[l], p[lay.w]);
            ad::Var hn =
                ad::tanh(ad::layer_norm(pre, p[lay.gamma], p[lay.beta], init_.ln_eps) + p[lay.b]);
            h_prev[l] = hn;
            in = hn;
        }
        ad::Var normed = ad::layer_norm(in, p[out_gamma_], p[out_beta_], init_.ln_eps);
        ad::Var zn = ad::matmul(normed, p[u_out_]) + ad::matmul(z_prev, p[w_out_]) + p[b_out_];
        z_prev = zn;
        z.push_back(zn);
    }
    return z;
}

LstmNet::LstmNet(int dim, int layers, const NetworkInit& init) : Network(dim, layers, init) {
    rng::Stream s(init.seed, /*stream=*/0x6c73746d);
    std::uint64_t c = 0;
    const std::int64_t h = hidden_width();

    auto make_gate = [&](const std::string& prefix, const char* gate, std::int64_t in,
                         std::int64_t width, bool normalized) {
        Gate gt;
        gt.u = add_param(prefix + "_u_" + gate, xavier_uniform(in, width, s, c));
        gt.w = add_param(prefix + "_w_" + gate, orthogonal(width, s, c));
        gt.b = add_param(prefix + "_b_" + gate, Tensor({1, width}));
        if (normalized) {
            gt.gamma = add_param(prefix + "_ln_" + gate + "_gamma", ln_gamma(width, init, s, c));
            gt.beta = add_param(prefix + "_ln_" + gate + "_beta", ln_beta(width, init, s, c));
        }
        return gt;
    };

    std::int64_t in = dim;
    for (int l = 0; l < layers; ++l) {
        const std::string prefix = "lstm" + std::to_string(l + 1);
        Cell cell;
        cell.in = make_gate(prefix, "i", in, h, true);
        cell.forget = make_gate(prefix, "f", in, h, true);
        cell.cand = make_gate(prefix, "c", in, h, true);
        cell.out = make_gate(prefix, "o", in, h, true);
        cell.cell_gamma = add_param(prefix + "_ln_cell_gamma", ln_gamma(h, init, s, c));
        cell.cell_beta = add_param(prefix + "_ln_cell_beta", ln_beta(h, init, s, c));
        cell.normalized = true;
        cells_.push_back(cell);
        in = h;
    }
    out_gamma_ = add_param("ln_out_gamma", ln_gamma(h, init, s, c));
    out_beta_ = add_param("ln_out_beta", ln_beta(h, init, s, c));
    {
        Cell cell;
        cell.in = make_gate("lstm_out", "i", h, dim, false);
        cell.forget = make_gate("lstm_out", "f", h, dim, false);
        cell.cand = make_gate("lstm_out", "c", h, dim, false);
        cell.out = make_gate("lstm_out", "o", h, dim, false);
        cell.normalized = false;
        cells_.push_back(cell);
    }
}

std::vector<ad::Var> LstmNet::unroll(ad::Graph& g, std::span<const ad::Var> x_steps,
                                     std::span<const ad::Var> p) const {
    const std::int64_t m = x_steps.empty() ? 1 : x_steps[0].value().rows();
    const std::int64_t h = hidden_width();

    std::vector<ad::Var> h_prev, c_prev;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
        const std::int64_t width = cells_[l].normalized ? h : dim_;
        h_prev.push_back(g.constant(Tensor::zeros({m, width})));
        c_prev.push_back(g.constant(Tensor::zeros({m, width})));
    }

    auto gate_pre = [&](const Gate& gt, ad::Var in, ad::Var hp, bool normalized) {
        ad::Var pre = ad::matmul(in, p[gt.u]) + ad::matmul(hp, p[gt.w]);
        if (normalized) pre = ad::layer_norm(pre, p[gt.gamma], p[gt.beta], init_.ln_eps);
        return pre + p[gt.b];
    };

    std::vector<ad::Var> z;
    z.reserve(x_steps.size());
    for (const ad::Var& xn : x_steps) {
        ad::Var in = xn;
        for (std::size_t l = 0; l < cells_.size(); ++l) {
            const Cell& cell = cells_[l];
            if (!cell.normalized)
                in = ad::layer_norm(in, p[out_gamma_], p[out_beta_], init_.ln_eps);
            ad::Var gi = ad::sigmoid(gate_pre(cell.in, in, h_prev[l], cell.normalized));
            ad::Var gf = ad::sigmoid(gate_pre(cell.forget, in, h_prev[l], cell.normalized));
            ad::Var gc = ad::tanh(gate_pre(cell.cand, in, h_prev[l], cell.normalized));
            ad::Var go = ad::sigmoid(gate_pre(cell.out, in, h_prev[l], cell.normalized));
            ad::Var cn = gf * c_prev[l] + gi * gc;
            ad::Var state = cell.normalized
                                ? ad::layer_norm(cn, p[cell.cell_gamma], p[cell.cell_beta],
                                                 init_.ln_eps)
                                : cn;
            ad::Var hn = go * ad::tanh(state);
            c_prev[l] = cn;
            h_prev[l] = hn;
            in = hn;
        }
        z.push_back(in);
    }
    return z;
}

std::unique_ptr<Network> make_network(const std::string& kind, int dim, int layers,
                                      const NetworkInit& init) {
    if (kind == "stacked_rnn") return std::make_unique<StackedRnn>(dim, layers, init);
    if (kind == "lstm") return std::make_unique<LstmNet>(dim, layers, init);
    throw ConfigError("unknown network kind '" + kind + "'");
}

std::int64_t param_count(const Network& net) { return net.trainable_scalars() + 1; }

std::int64_t stacked_rnn_closed_form_count(int dim) {
    const std::int64_t d = dim, h = d + 10;
    return 1 + 2 * d * h + 3 * h * h + d * d + 6 * h + 3 * d;
}

void save_parameters(const Network& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open checkpoint file for writing: " + path);
    out << "fbsde-params 1\n";
    const auto& names = net.param_names();
    const auto& values = net.param_values();
    char buf[40];
    for (std::size_t i = 0; i < names.size(); ++i) {
        out << names[i] << " " << values[i].rank();
        for (auto d : values[i].shape()) out << " " << d;
        for (double v : values[i].values()) {
            std::snprintf(buf, sizeof buf, " %.17g", v);
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

void load_parameters(Network& net, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint file: " + path);
    std::string header;
    std::getline(in, header);
    if (header != "fbsde-params 1")
        throw ConfigError("unrecognized checkpoint header in " + path);
    const auto& names = net.param_names();
    auto& values = net.param_values();
    std::string line;
    std::size_t i = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (i >= names.size()) throw ConfigError("checkpoint has extra tensors: " + path);
        std::istringstream ls(line);
        std::string name;
        int rank;
        ls >> name >> rank;
        if (name != names[i])
            throw ConfigError("checkpoint tensor '" + name + "' does not match expected '" +
                              names[i] + "'");
        std::vector<std::int64_t> shape(static_cast<std::size_t>(rank));
        for (auto& d : shape) ls >> d;
        if (shape != values[i].shape())
            throw ConfigError("checkpoint shape mismatch for tensor '" + name + "'");
        for (double& v : values[i].values()) ls >> v;
        if (!ls) throw ConfigError("malformed checkpoint line for tensor '" + name + "'");
        ++i;
    }
    if (i != names.size()) throw ConfigError("checkpoint is missing tensors: " + path);
}

} // namespace fbsde::nets
