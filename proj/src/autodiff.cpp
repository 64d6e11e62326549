#include "fbsde/autodiff.hpp"

#include <cmath>
#include <optional>
#include <utility>

#include "fbsde/errors.hpp"

namespace fbsde::ad {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::emit(Op op, NodeId a, NodeId b, Tensor value, bool requires_grad) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Graph::constant(Tensor t) { return emit(Op::constant, -1, -1, std::move(t), false); }
Var Graph::constant_scalar(double v) { return constant(Tensor::scalar(v)); }
Var Graph::leaf(Tensor t) { return emit(Op::leaf, -1, -1, std::move(t), true); }

std::vector<NodeId> Graph::trainable_leaves() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].op == Op::leaf) out.push_back(static_cast<NodeId>(i));
    return out;
}

namespace {

Graph& same_graph(Var a, Var b) {
    if (a.graph() != b.graph()) throw ShapeError("operands belong to different graphs");
    return *a.graph();
}

bool rg(const Graph& g, NodeId id) { return g.node(id).requires_grad; }

Var emit1(Graph& g, Op op, Var a, Tensor value) {
    return g.emit(op, a.id(), -1, std::move(value), rg(g, a.id()));
}

Var emit2(Graph& g, Op op, Var a, Var b, Tensor value) {
    return g.emit(op, a.id(), b.id(), std::move(value), rg(g, a.id()) || rg(g, b.id()));
}

} // namespace

Var add(Var a, Var b) { return emit2(same_graph(a, b), Op::add, a, b, tmath::add(a.value(), b.value())); }
Var sub(Var a, Var b) { return emit2(same_graph(a, b), Op::sub, a, b, tmath::sub(a.value(), b.value())); }
Var mul(Var a, Var b) { return emit2(same_graph(a, b), Op::mul, a, b, tmath::mul(a.value(), b.value())); }
Var div(Var a, Var b) { return emit2(same_graph(a, b), Op::div, a, b, tmath::div(a.value(), b.value())); }
Var neg(Var a) { return emit1(*a.graph(), Op::neg, a, tmath::neg(a.value())); }

Var matmul(Var a, Var b) {
    return emit2(same_graph(a, b), Op::matmul, a, b, tmath::matmul(a.value(), b.value()));
}

Var transpose(Var a) { return emit1(*a.graph(), Op::transpose, a, tmath::transpose(a.value())); }
Var tanh(Var a) { return emit1(*a.graph(), Op::tanh, a, tmath::tanh(a.value())); }
Var sigmoid(Var a) { return emit1(*a.graph(), Op::sigmoid, a, tmath::sigmoid(a.value())); }
Var exp(Var a) { return emit1(*a.graph(), Op::exp, a, tmath::exp(a.value())); }
Var max0(Var a) { return emit1(*a.graph(), Op::max0, a, tmath::max0(a.value())); }
Var sqrt(Var a) { return emit1(*a.graph(), Op::sqrt, a, tmath::sqrt(a.value())); }
Var sum_all(Var a) { return emit1(*a.graph(), Op::sum_all, a, tmath::sum_all(a.value())); }
Var sum_rows(Var a) { return emit1(*a.graph(), Op::sum_rows, a, tmath::sum_rows(a.value())); }
Var sum_cols(Var a) { return emit1(*a.graph(), Op::sum_cols, a, tmath::sum_cols(a.value())); }

Var operator*(double c, Var a) { return mul(a.graph()->constant_scalar(c), a); }
Var operator+(Var a, double c) { return add(a, a.graph()->constant_scalar(c)); }
Var operator-(double c, Var a) { return sub(a.graph()->constant_scalar(c), a); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Graph& g = *x.graph();
    const std::int64_t f = x.value().cols();
    if (x.value().rank() != 2 || f < 2)
        throw ShapeError("layer_norm needs a [batch x features] input with features >= 2, got " +
                         x.value().shape_str());
    if (gamma.value().numel() != f || beta.value().numel() != f)
        throw ShapeError("layer_norm gamma/beta must have one entry per feature");
    Var inv_f = g.constant_scalar(1.0 / static_cast<double>(f));
    Var mu = mul(sum_rows(x), inv_f);
    Var xc = sub(x, mu);
    Var var = mul(sum_rows(mul(xc, xc)), inv_f);
    if (eps == 0.0) {
        for (double v : var.value().values())
            if (v == 0.0)
                throw NumericalError("layer_norm: zero feature variance with eps == 0");
    }
    Var stddev = sqrt(add(var, g.constant_scalar(eps)));
    return add(mul(div(xc, stddev), gamma), beta);
}

namespace {

// The adjoint sweep is written once against an ops strategy: GraphOps emits
// nodes (so the results stay differentiable), ValueOps computes plain
// tensors with the same arithmetic. Both walk the same recorded graph.
struct GraphOps {
    Graph& g;
    using H = Var;
    static const Tensor& val(const H& h) { return h.value(); }
    H forward(NodeId id) const { return Var(&g, id); }
    H constant(Tensor t) const { return g.constant(std::move(t)); }
    H add(const H& a, const H& b) const { return ad::add(a, b); }
    H sub(const H& a, const H& b) const { return ad::sub(a, b); }
    H mul(const H& a, const H& b) const { return ad::mul(a, b); }
    H div(const H& a, const H& b) const { return ad::div(a, b); }
    H neg(const H& a) const { return ad::neg(a); }
    H matmul(const H& a, const H& b) const { return ad::matmul(a, b); }
    H transpose(const H& a) const { return ad::transpose(a); }
    H sum_all(const H& a) const { return ad::sum_all(a); }
    H sum_rows(const H& a) const { return ad::sum_rows(a); }
    H sum_cols(const H& a) const { return ad::sum_cols(a); }
};

struct ValueOps {
    const Graph& g;
    using H = Tensor;
    static const Tensor& val(const H& h) { return h; }
    H forward(NodeId id) const { return g.value(id); }
    H constant(Tensor t) const { return t; }
    H add(const H& a, const H& b) const { return tmath::add(a, b); }
    H sub(const H& a, const H& b) const { return tmath::sub(a, b); }
    H mul(const H& a, const H& b) const { return tmath::mul(a, b); }
    H div(const H& a, const H& b) const { return tmath::div(a, b); }
    H neg(const H& a) const { return tmath::neg(a); }
    H matmul(const H& a, const H& b) const { return tmath::matmul(a, b); }
    H transpose(const H& a) const { return tmath::transpose(a); }
    H sum_all(const H& a) const { return tmath::sum_all(a); }
    H sum_rows(const H& a) const { return tmath::sum_rows(a); }
    H sum_cols(const H& a) const { return tmath::sum_cols(a); }
};

// Collapse a gradient back onto the shape of a broadcast operand.
template <class Ops>
typename Ops::H reduce_to_shape(const Ops& ops, typename Ops::H grad, std::int64_t rows,
                                std::int64_t cols) {
    const Tensor& gv = Ops::val(grad);
    if (gv.rows() == rows && gv.cols() == cols) return grad;
    if (rows == 1 && cols == 1) return ops.sum_all(grad);
    if (cols == 1 && rows == gv.rows()) return ops.sum_rows(grad);
    if (rows == 1 && cols == gv.cols()) return ops.sum_cols(grad);
    throw ShapeError("cannot reduce gradient " + gv.shape_str() + " to [" + std::to_string(rows) +
                     "x" + std::to_string(cols) + "]");
}

// 1 where positive, 0 elsewhere; the subgradient at 0 is taken as 0.
Tensor step_mask(const Tensor& t) {
    Tensor m({t.rows(), t.cols()});
    const double* src = t.data();
    double* dst = m.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) dst[i] = src[i] > 0.0 ? 1.0 : 0.0;
    return m;
}

template <class Ops>
struct Sweep {
    const Ops& ops;
    const Graph& g;
    std::vector<char> reach;
    std::vector<std::optional<typename Ops::H>> adjoint;

    void accumulate(NodeId parent, typename Ops::H contribution) {
        if (!reach[static_cast<std::size_t>(parent)]) return;
        auto& slot = adjoint[static_cast<std::size_t>(parent)];
        if (slot)
            slot = ops.add(*slot, contribution);
        else
            slot = std::move(contribution);
    }

    void accumulate_reduced(NodeId parent, typename Ops::H contribution) {
        if (!reach[static_cast<std::size_t>(parent)]) return;
        const Tensor& pv = g.value(parent);
        accumulate(parent, reduce_to_shape(ops, std::move(contribution), pv.rows(), pv.cols()));
    }

    void backprop(NodeId id) {
        // Copy the structural fields: in graph mode emitting VJP nodes
        // appends to the graph, so references must not be held across
        // emissions.
        const Op op = g.node(id).op;
        const NodeId pa = g.node(id).a;
        const NodeId pb = g.node(id).b;
        typename Ops::H out = ops.forward(id);
        typename Ops::H adj = *adjoint[static_cast<std::size_t>(id)];
        switch (op) {
        case Op::constant:
        case Op::leaf:
            return;
        case Op::add:
            accumulate_reduced(pa, adj);
            accumulate_reduced(pb, adj);
            return;
        case Op::sub:
            accumulate_reduced(pa, adj);
            accumulate_reduced(pb, ops.neg(adj));
            return;
        case Op::mul:
            accumulate_reduced(pa, ops.mul(adj, ops.forward(pb)));
            accumulate_reduced(pb, ops.mul(adj, ops.forward(pa)));
            return;
        case Op::div:
            accumulate_reduced(pa, ops.div(adj, ops.forward(pb)));
            accumulate_reduced(pb, ops.neg(ops.div(ops.mul(adj, out), ops.forward(pb))));
            return;
        case Op::neg:
            accumulate(pa, ops.neg(adj));
            return;
        case Op::matmul:
            accumulate(pa, ops.matmul(adj, ops.transpose(ops.forward(pb))));
            accumulate(pb, ops.matmul(ops.transpose(ops.forward(pa)), adj));
            return;
        case Op::transpose:
            accumulate(pa, ops.transpose(adj));
            return;
        case Op::tanh:
            accumulate(pa, ops.mul(adj, ops.sub(ops.constant(Tensor::scalar(1.0)),
                                                ops.mul(out, out))));
            return;
        case Op::sigmoid: {
            auto one = ops.constant(Tensor::scalar(1.0));
            accumulate(pa, ops.mul(adj, ops.mul(out, ops.sub(one, out))));
            return;
        }
        case Op::exp:
            accumulate(pa, ops.mul(adj, out));
            return;
        case Op::max0:
            accumulate(pa, ops.mul(adj, ops.constant(step_mask(g.value(pa)))));
            return;
        case Op::sqrt:
            accumulate(pa, ops.div(adj, ops.mul(ops.constant(Tensor::scalar(2.0)), out)));
            return;
        case Op::sum_all:
        case Op::sum_rows:
        case Op::sum_cols: {
            const Tensor& pv = g.value(pa);
            accumulate(pa, ops.mul(ops.constant(Tensor::full({pv.rows(), pv.cols()}, 1.0)), adj));
            return;
        }
        }
    }
};

template <class Ops>
std::vector<typename Ops::H> run_sweep(const Ops& ops, const Graph& g, Var root,
                                       std::span<const Var> targets) {
    if (root.value().numel() != 1)
        throw ShapeError("gradient root must be scalar, got " + root.value().shape_str());

    const std::size_t n = static_cast<std::size_t>(root.id()) + 1;
    Sweep<Ops> sweep{ops, g, std::vector<char>(n, 0), {}};
    sweep.adjoint.resize(n);

    NodeId lowest = root.id();
    for (const Var& t : targets) {
        if (t.graph() != root.graph())
            throw ShapeError("gradient target belongs to a different graph");
        if (t.id() <= root.id()) {
            sweep.reach[static_cast<std::size_t>(t.id())] = 1;
            lowest = std::min(lowest, t.id());
        }
    }
    for (NodeId id = lowest; id <= root.id(); ++id) {
        auto& r = sweep.reach[static_cast<std::size_t>(id)];
        if (r) continue;
        const Node& nd = g.node(id);
        if ((nd.a >= 0 && sweep.reach[static_cast<std::size_t>(nd.a)]) ||
            (nd.b >= 0 && sweep.reach[static_cast<std::size_t>(nd.b)]))
            r = 1;
    }

    if (sweep.reach[static_cast<std::size_t>(root.id())]) {
        sweep.adjoint[static_cast<std::size_t>(root.id())] = ops.constant(Tensor::scalar(1.0));
        for (NodeId id = root.id(); id >= lowest; --id) {
            if (!sweep.adjoint[static_cast<std::size_t>(id)] ||
                !sweep.reach[static_cast<std::size_t>(id)])
                continue;
            sweep.backprop(id);
        }
    }

    std::vector<typename Ops::H> out;
    out.reserve(targets.size());
    for (const Var& t : targets) {
        const Tensor& tv = t.value();
        const bool in_range = t.id() <= root.id();
        if (in_range && sweep.adjoint[static_cast<std::size_t>(t.id())]) {
            out.push_back(reduce_to_shape(
                ops, *sweep.adjoint[static_cast<std::size_t>(t.id())], tv.rows(), tv.cols()));
        } else {
            out.push_back(ops.constant(Tensor::zeros({tv.rows(), tv.cols()})));
        }
    }
    return out;
}

} // namespace

std::vector<Var> grad(Var root, std::span<const Var> targets) {
    GraphOps ops{*root.graph()};
    return run_sweep(ops, *root.graph(), root, targets);
}

std::vector<Tensor> grad_values(Var root, std::span<const Var> targets) {
    ValueOps ops{*root.graph()};
    return run_sweep(ops, *root.graph(), root, targets);
}

std::unordered_map<NodeId, Tensor> backward(Graph& g, Var root) {
    std::vector<Var> targets;
    for (NodeId id : g.trainable_leaves()) targets.emplace_back(&g, id);
    std::vector<Tensor> gs = grad_values(root, targets);
    std::unordered_map<NodeId, Tensor> out;
    for (std::size_t i = 0; i < targets.size(); ++i)
        out.emplace(targets[i].id(), std::move(gs[i]));
    return out;
}

std::vector<Var> input_jacobian_columns(Var outputs, Var inputs) {
    Graph& g = *outputs.graph();
    const std::int64_t n_cols = outputs.value().cols();
    if (outputs.value().rows() != inputs.value().rows() || n_cols != inputs.value().cols())
        throw ShapeError("jacobian diagonal needs matching shapes, got " +
                         outputs.value().shape_str() + " and " + inputs.value().shape_str());
    std::vector<Var> cols;
    cols.reserve(static_cast<std::size_t>(n_cols));
    for (std::int64_t i = 0; i < n_cols; ++i) {
        Tensor mask({1, n_cols});
        mask(0, i) = 1.0;
        Var root = sum_all(mul(outputs, g.constant(std::move(mask))));
        Var t[] = {inputs};
        cols.push_back(grad(root, t)[0]);
    }
    return cols;
}

Var input_jacobian_diag(Var outputs, Var inputs) {
    Graph& g = *outputs.graph();
    std::vector<Var> cols = input_jacobian_columns(outputs, inputs);
    Var diag;
    for (std::size_t i = 0; i < cols.size(); ++i) {
        Tensor mask({1, outputs.value().cols()});
        mask(0, static_cast<std::int64_t>(i)) = 1.0;
        Var contrib = mul(cols[i], g.constant(std::move(mask)));
        diag = i == 0 ? contrib : add(diag, contrib);
    }
    return diag;
}

} // namespace fbsde::ad
