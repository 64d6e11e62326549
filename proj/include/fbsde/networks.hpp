#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbsde/autodiff.hpp"
#include "fbsde/tensor.hpp"

namespace fbsde::nets {

struct NetworkInit {
    std::uint64_t seed = 0;
    double ln_gamma_min = 0.9;
    double ln_gamma_max = 1.1;
    double ln_beta_std = 0.1;
    double ln_eps = 1e-5;
};

// Recurrent approximator of the map t -> Z_t. One forward call binds every
// parameter tensor exactly once as a trainable leaf and unrolls the
// recursion over the given time slices; hidden and output state start at
// zero. Step n of the result depends only on inputs at steps <= n.
class Network {
public:
    virtual ~Network() = default;
    virtual const char* kind() const = 0;

    int dim() const { return dim_; }
    int hidden_width() const { return dim_ + 10; }
    int hidden_layers() const { return layers_; }
    double ln_eps() const { return init_.ln_eps; }

    const std::vector<std::string>& param_names() const { return names_; }
    std::vector<Tensor>& param_values() { return values_; }
    const std::vector<Tensor>& param_values() const { return values_; }
    std::int64_t trainable_scalars() const; // network tensors only

    struct SeqForward {
        std::vector<ad::Var> z;      // one [m x d] node per step
        std::vector<ad::Var> x;      // the input constants, per step
        std::vector<ad::Var> params; // bound leaves, aligned with param_names
    };
    // Runs the recursion over time slices 0..n_steps-1 of x_seq [m x T x d].
    SeqForward forward(ad::Graph& g, const Tensor& x_seq, int n_steps = -1) const;

protected:
    Network(int dim, int layers, const NetworkInit& init);
    std::size_t add_param(std::string name, Tensor value);
    virtual std::vector<ad::Var> unroll(ad::Graph& g, std::span<const ad::Var> x_steps,
                                        std::span<const ad::Var> p) const = 0;

    int dim_;
    int layers_;
    NetworkInit init_;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

// Stacked recurrent net: hidden layers h = tanh(LN(x U + h W) + b), output
// layer z = LN(h_last) U_o + z_prev W_o + b_o. The output layer's LN sits on
// its input stream; putting it after U_o would normalize across d features
// and collapse to a constant when d = 1.
class StackedRnn : public Network {
public:
    StackedRnn(int dim, int layers, const NetworkInit& init);
    const char* kind() const override { return "stacked_rnn"; }

protected:
    std::vector<ad::Var> unroll(ad::Graph& g, std::span<const ad::Var> x_steps,
                                std::span<const ad::Var> p) const override;

private:
    struct Layer {
        std::size_t u, w, b, gamma, beta;
    };
    std::vector<Layer> hidden_;
    std::size_t out_gamma_, out_beta_, u_out_, w_out_, b_out_;
};

// Multi-layer LSTM: gate pre-activations of the hidden layers are
// layer-normalized per gate, the cell state is normalized before the output
// tanh, and one LN sits on the stream feeding the plain d-wide output LSTM
// layer. Outputs are the final layer's hidden state, bounded in (-1, 1).
class LstmNet : public Network {
public:
    LstmNet(int dim, int layers, const NetworkInit& init);
    const char* kind() const override { return "lstm"; }

protected:
    std::vector<ad::Var> unroll(ad::Graph& g, std::span<const ad::Var> x_steps,
                                std::span<const ad::Var> p) const override;

private:
    struct Gate {
        std::size_t u, w, b;
        std::size_t gamma = 0, beta = 0; // unused in the output layer
    };
    struct Cell {
        Gate in, forget, cand, out;
        std::size_t cell_gamma = 0, cell_beta = 0;
        bool normalized = true;
    };
    std::vector<Cell> cells_; // hidden layers then the output layer
    std::size_t out_gamma_, out_beta_;
};

std::unique_ptr<Network> make_network(const std::string& kind, int dim, int layers,
                                      const NetworkInit& init);

// Trainable-scalar count of the whole method: network parameters plus the
// trained initial value.
std::int64_t param_count(const Network& net);

// Closed-form count for the two-hidden-layer stacked RNN,
// 1 + 2d(d+10) + 3(d+10)^2 + d^2 + 6(d+10) + 3d. The enumerated count
// exceeds it by 2*(hidden - d) = 20 because the output LN normalizes the
// last hidden stream; see param_count.
std::int64_t stacked_rnn_closed_form_count(int dim);

// Plain text checkpoint: one "name rank extents... values..." line per
// tensor, full round-trip precision.
void save_parameters(const Network& net, const std::string& path);
void load_parameters(Network& net, const std::string& path);

} // namespace fbsde::nets
