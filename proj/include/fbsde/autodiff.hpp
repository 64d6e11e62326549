#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <unordered_map>
#include <vector>

#include "fbsde/tensor.hpp"

namespace fbsde::ad {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    constant,
    leaf, // trainable
    add,
    sub,
    mul,
    div,
    neg,
    matmul,
    transpose,
    tanh,
    sigmoid,
    exp,
    max0,
    sqrt,
    sum_all,
    sum_rows,
    sum_cols,
};

class Graph;

// Cheap handle to a graph node. Arithmetic on handles appends nodes; forward
// values are computed eagerly so a node's value is available immediately.
class Var {
public:
    Var() = default;
    Var(Graph* g, NodeId id) : graph_(g), id_(id) {}
    Graph* graph() const { return graph_; }
    NodeId id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }
    const Tensor& value() const;

private:
    Graph* graph_ = nullptr;
    NodeId id_ = -1;
};

struct Node {
    Op op;
    NodeId a = -1;
    NodeId b = -1;
    bool requires_grad = false;
    Tensor value;
};

// Append-only computation tape. Parents always precede children, and a
// backward sweep touches each node at most once, in reverse creation order.
// The tape is rebuilt from scratch every training iteration. Node storage is
// a deque so references returned by value() survive later appends.
class Graph {
public:
    Var constant(Tensor t);
    Var constant_scalar(double v);
    Var leaf(Tensor t); // marked trainable

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    std::vector<NodeId> trainable_leaves() const;

    Var emit(Op op, NodeId a, NodeId b, Tensor value, bool requires_grad);

private:
    std::deque<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var max0(Var a);
Var sqrt(Var a);
Var sum_all(Var a);
Var sum_rows(Var a);
Var sum_cols(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
Var operator*(double c, Var a);
Var operator+(Var a, double c);
Var operator-(double c, Var a);

// Per-sample standardization over the feature axis followed by an affine
// scale/shift. gamma and beta are [1 x f] rows; x is [m x f] with f >= 2.
// With eps == 0 a constant input row raises; with eps > 0 it yields beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps);

// Gradients of a scalar root with respect to `targets`, returned as graph
// nodes so they can be differentiated again. A target the root does not
// depend on yields a zero tensor. The sweep is pruned to nodes lying between
// the targets and the root.
std::vector<Var> grad(Var root, std::span<const Var> targets);

// Same sweep and arithmetic, but accumulating plain tensors instead of
// recording nodes. Bitwise-identical to grad(); use it when the gradients
// feed an optimizer rather than further differentiation.
std::vector<Tensor> grad_values(Var root, std::span<const Var> targets);

// Gradient of a scalar root for every trainable leaf of the graph, keyed by
// leaf node id. Leaves the root does not reach map to zero tensors.
std::unordered_map<NodeId, Tensor> backward(Graph& g, Var root);

// Per-sample Jacobian columns: element (m, j) of column i is
// d outputs[m, i] / d inputs[m, j]. One pruned backward sweep per output
// coordinate. Requires that no op mixes batch rows between inputs and outputs.
std::vector<Var> input_jacobian_columns(Var outputs, Var inputs);

// Diagonal of the per-sample Jacobian: entry (m, i) = d outputs[m, i] /
// d inputs[m, i]. Unreachable outputs give zeros. The result is a graph node,
// so downstream losses may differentiate through it.
Var input_jacobian_diag(Var outputs, Var inputs);

} // namespace fbsde::ad
