#include "facefit/tape.hpp"

#include <algorithm>
#include <cmath>

#include "facefit/error.hpp"

namespace facefit::ad {

namespace {

// Right-aligned numpy-style broadcast of two shapes.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const size_t ra = a.size(), rb = b.size();
    const size_t r = std::max(ra, rb);
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            fail(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                 " are not broadcast-compatible");
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides with 0 on broadcast (or missing) axes, right-aligned to `out`.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t s = 1;
    const size_t off = out.size() - in.size();
    for (size_t i = in.size(); i-- > 0;) {
        strides[i + off] = (in[i] == 1 && out[i + off] != 1) ? 0 : s;
        s *= in[i];
    }
    return strides;
}

template <class F>
Array broadcast_binary(const Array& a, const Array& b, const Shape& out_shape, F f) {
    Array out(out_shape);
    const int64_t n = out.numel();
    if (a.shape() == b.shape()) {
        for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (a.numel() == 1) {
        const double av = a[0];
        for (int64_t i = 0; i < n; ++i) out[i] = f(av, b[i]);
        return out;
    }
    if (b.numel() == 1) {
        const double bv = b[0];
        for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], bv);
        return out;
    }
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const size_t r = out_shape.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = f(a[ia], b[ib]);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out_shape[d]) break;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return out;
}

// Sum `g` down to `target` shape (inverse of broadcasting).
Array reduce_to_shape(const Array& g, const Shape& target) {
    if (g.shape() == target) return g;
    Array out(target);
    if (out.numel() == 1) {
        double s = 0.0;
        for (int64_t i = 0; i < g.numel(); ++i) s += g[i];
        out[0] = s;
        return out;
    }
    const auto st = broadcast_strides(target, g.shape());
    const size_t r = g.shape().size();
    std::vector<int64_t> idx(r, 0);
    int64_t it = 0;
    for (int64_t i = 0; i < g.numel(); ++i) {
        out[it] += g[i];
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            it += st[d];
            if (idx[d] < g.shape()[d]) break;
            it -= st[d] * g.shape()[d];
            idx[d] = 0;
        }
    }
    return out;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// (outer, axis, inner) factorization for one-axis reductions and slices.
struct AxisSplit {
    int64_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit sp;
    sp.dim = s[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

} // namespace

const Array& Var::val() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape(); }
int64_t Var::numel() const { return tape->value(id).numel(); }
double Var::item() const { return tape->value(id).item(); }

const Array& Gradients::wrt(Var v) const {
    auto it = by_id.find(v.id);
    if (it == by_id.end()) fail("Gradients: node " + std::to_string(v.id) + " was not requested");
    return it->second;
}

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::MatMul: return "matmul";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Pow: return "pow";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::L1Norm: return "l1_norm";
        case Op::L2Norm: return "l2_norm";
        case Op::Dot: return "dot";
        case Op::Broadcast: return "broadcast";
        case Op::Reshape: return "reshape";
        case Op::Slice: return "slice";
        case Op::Gather: return "gather";
        case Op::Clamp: return "clamp";
    }
    return "?";
}

const Tape::Node& Tape::node(int32_t id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        fail("Tape: node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<size_t>(id)];
}

const Array& Tape::value(int32_t id) const { return node(id).value; }

bool Tape::is_leaf(int32_t id) const { return node(id).op == Op::Leaf; }

Var Tape::push(Node n) {
    if (n.op != Op::Leaf && n.op != Op::Const) {
        n.needs_grad = false;
        if (n.parent0 >= 0) n.needs_grad = n.needs_grad || node(n.parent0).needs_grad;
        if (n.parent1 >= 0) n.needs_grad = n.needs_grad || node(n.parent1).needs_grad;
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::check_same_tape(Var a, Var b, const char* op) const {
    if (!a.valid() || !b.valid() || a.tape != this || b.tape != this)
        fail(std::string(op) + ": operands must live on the same tape");
    return a;
}

Var Tape::leaf(Array v, std::string name) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.needs_grad = true;
    n.name = std::move(name);
    return push(std::move(n));
}

Var Tape::constant(Array v) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
}

Var Tape::constant(double v) { return constant(Array::scalar(v)); }

Var Tape::add(Var a, Var b) {
    check_same_tape(a, b, "add");
    const Shape out = broadcast_shape(a.shape(), b.shape(), "add");
    Node n;
    n.op = Op::Add;
    n.parent0 = a.id;
    n.parent1 = b.id;
    n.value = broadcast_binary(a.val(), b.val(), out, [](double x, double y) { return x + y; });
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a, b, "sub");
    const Shape out = broadcast_shape(a.shape(), b.shape(), "sub");
    Node n;
    n.op = Op::Sub;
    n.parent0 = a.id;
    n.parent1 = b.id;
    n.value = broadcast_binary(a.val(), b.val(), out, [](double x, double y) { return x - y; });
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a, b, "mul");
    const Shape out = broadcast_shape(a.shape(), b.shape(), "mul");
    Node n;
    n.op = Op::Mul;
    n.parent0 = a.id;
    n.parent1 = b.id;
    n.value = broadcast_binary(a.val(), b.val(), out, [](double x, double y) { return x * y; });
    return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
    check_same_tape(a, b, "div");
    const Shape out = broadcast_shape(a.shape(), b.shape(), "div");
    Node n;
    n.op = Op::Div;
    n.parent0 = a.id;
    n.parent1 = b.id;
    n.value = broadcast_binary(a.val(), b.val(), out, [](double x, double y) { return x / y; });
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        fail("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb) +
             " at node " + std::to_string(nodes_.size()));
    const int64_t m = sa[0], k = sa[1], p = sb[1];
    Node n;
    n.op = Op::MatMul;
    n.parent0 = a.id;
    n.parent1 = b.id;
    n.value = Array({m, p});
    const Array& av = a.val();
    const Array& bv = b.val();
    for (int64_t i = 0; i < m; ++i) {
        double* out_row = n.value.data() + i * p;
        const double* a_row = av.data() + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double s = a_row[kk];
            const double* b_row = bv.data() + kk * p;
            for (int64_t j = 0; j < p; ++j) out_row[j] += s * b_row[j];
        }
    }
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.parent0 = a.id;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = av[i] > 0.0 ? av[i] : 0.0;
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.parent0 = a.id;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = stable_sigmoid(av[i]);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.parent0 = a.id;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = std::tanh(av[i]);
    return push(std::move(n));
}

Var Tape::pow(Var a, double exponent) {
    Node n;
    n.op = Op::Pow;
    n.parent0 = a.id;
    n.d0 = exponent;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = std::pow(av[i], exponent);
    if (!n.value.all_finite())
        fail("pow: non-finite result (exponent " + std::to_string(exponent) + ") at node " +
             std::to_string(nodes_.size()));
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    Node n;
    n.op = Op::Exp;
    n.parent0 = a.id;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = std::exp(av[i]);
    return push(std::move(n));
}

Var Tape::log(Var a) {
    Node n;
    n.op = Op::Log;
    n.parent0 = a.id;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) {
        if (av[i] <= 0.0)
            fail("log: non-positive input " + std::to_string(av[i]) + " at node " +
                 std::to_string(nodes_.size()));
        n.value[i] = std::log(av[i]);
    }
    return push(std::move(n));
}

Var Tape::reduce(Op op, Var a, int axis) {
    const Shape& s = a.shape();
    if (axis < 0 || static_cast<size_t>(axis) >= s.size())
        fail(std::string(op_name(op)) + ": axis " + std::to_string(axis) + " out of range for " +
             shape_str(s));
    const AxisSplit sp = split_axis(s, axis);
    Shape out;
    for (size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) out.push_back(s[i]);
    Node n;
    n.op = op;
    n.parent0 = a.id;
    n.i0 = axis;
    n.i1 = 1; // axis reduction marker
    n.value = Array(out);
    const Array& av = a.val();
    const double inv = 1.0 / static_cast<double>(sp.dim);
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
            double acc = 0.0;
            for (int64_t d = 0; d < sp.dim; ++d) acc += av[(o * sp.dim + d) * sp.inner + in];
            n.value[o * sp.inner + in] = op == Op::Mean ? acc * inv : acc;
        }
    }
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.parent0 = a.id;
    n.value = Array::scalar(0.0);
    const Array& av = a.val();
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
    n.value[0] = s;
    return push(std::move(n));
}

Var Tape::sum(Var a, int axis) { return reduce(Op::Sum, a, axis); }

Var Tape::mean(Var a) {
    if (a.numel() == 0) fail("mean: empty array");
    Node n;
    n.op = Op::Mean;
    n.parent0 = a.id;
    n.value = Array::scalar(0.0);
    const Array& av = a.val();
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i];
    n.value[0] = s / static_cast<double>(av.numel());
    return push(std::move(n));
}

Var Tape::mean(Var a, int axis) { return reduce(Op::Mean, a, axis); }

Var Tape::l1_norm(Var a) {
    Node n;
    n.op = Op::L1Norm;
    n.parent0 = a.id;
    const Array& av = a.val();
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += std::abs(av[i]);
    n.value = Array::scalar(s);
    return push(std::move(n));
}

Var Tape::l2_norm(Var a) {
    Node n;
    n.op = Op::L2Norm;
    n.parent0 = a.id;
    const Array& av = a.val();
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i] * av[i];
    n.value = Array::scalar(std::sqrt(s));
    return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
    check_same_tape(a, b, "dot");
    if (a.shape().size() != 1 || a.shape() != b.shape())
        fail("dot: expects equal-length 1-D vectors, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
    Node n;
    n.op = Op::Dot;
    n.parent0 = a.id;
    n.parent1 = b.id;
    const Array& av = a.val();
    const Array& bv = b.val();
    double s = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
    n.value = Array::scalar(s);
    return push(std::move(n));
}

Var Tape::broadcast_to(Var a, Shape target) {
    const Shape out = broadcast_shape(a.shape(), target, "broadcast");
    if (out != target)
        fail("broadcast: cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(target));
    Node n;
    n.op = Op::Broadcast;
    n.parent0 = a.id;
    n.value = broadcast_binary(a.val(), Array::zeros(target), target,
                               [](double x, double) { return x; });
    return push(std::move(n));
}

Var Tape::reshape(Var a, Shape target) {
    if (shape_numel(target) != a.numel())
        fail("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(target));
    Node n;
    n.op = Op::Reshape;
    n.parent0 = a.id;
    n.value = Array(std::move(target), a.val().vec());
    return push(std::move(n));
}

Var Tape::slice(Var a, int axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    if (axis < 0 || static_cast<size_t>(axis) >= s.size())
        fail("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    if (start < 0 || len < 0 || start + len > s[static_cast<size_t>(axis)])
        fail("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
             ") out of bounds for axis of size " + std::to_string(s[static_cast<size_t>(axis)]));
    const AxisSplit sp = split_axis(s, axis);
    Shape out = s;
    out[static_cast<size_t>(axis)] = len;
    Node n;
    n.op = Op::Slice;
    n.parent0 = a.id;
    n.i0 = axis;
    n.i1 = start;
    n.i2 = len;
    n.value = Array(out);
    const Array& av = a.val();
    for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t d = 0; d < len; ++d)
            for (int64_t in = 0; in < sp.inner; ++in)
                n.value[(o * len + d) * sp.inner + in] =
                    av[(o * sp.dim + start + d) * sp.inner + in];
    return push(std::move(n));
}

Var Tape::gather(Var a, std::vector<int64_t> flat_indices, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<int64_t>(flat_indices.size()))
        fail("gather: output shape " + shape_str(out_shape) + " does not match index count " +
             std::to_string(flat_indices.size()));
    const Array& av = a.val();
    Node n;
    n.op = Op::Gather;
    n.parent0 = a.id;
    n.value = Array(std::move(out_shape));
    for (size_t i = 0; i < flat_indices.size(); ++i) {
        const int64_t idx = flat_indices[i];
        if (idx < 0 || idx >= av.numel())
            fail("gather: index " + std::to_string(idx) + " out of range for source of " +
                 std::to_string(av.numel()) + " elements");
        n.value[static_cast<int64_t>(i)] = av[idx];
    }
    n.indices = std::move(flat_indices);
    return push(std::move(n));
}

Var Tape::clamp(Var a, double lo, double hi) {
    if (!(lo <= hi)) fail("clamp: lo must not exceed hi");
    Node n;
    n.op = Op::Clamp;
    n.parent0 = a.id;
    n.d0 = lo;
    n.d1 = hi;
    n.value = Array(a.shape());
    const Array& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) n.value[i] = std::min(std::max(av[i], lo), hi);
    return push(std::move(n));
}

Gradients Tape::backward(Var output, const std::vector<Var>& wrt) const {
    if (!output.valid() || output.tape != this) fail("backward: output is not on this tape");
    if (output.numel() != 1) fail("backward: output must be scalar, got " + shape_str(output.shape()));
    for (const Var& v : wrt) {
        if (!v.valid() || v.tape != this) fail("backward: wrt node is not on this tape");
        const Node& nd = node(v.id);
        if (nd.op == Op::Const)
            fail("backward: gradient requested for constant node " + std::to_string(v.id));
        if (nd.op != Op::Leaf)
            fail("backward: gradient requested for non-leaf node " + std::to_string(v.id) + " (" +
                 op_name(nd.op) + ")");
    }

    std::vector<Array> adj(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    adj[static_cast<size_t>(output.id)] = Array::full(output.shape(), 1.0);
    has[static_cast<size_t>(output.id)] = 1;

    auto accumulate = [&](int32_t pid, Array g) {
        if (pid < 0 || !nodes_[static_cast<size_t>(pid)].needs_grad) return;
        if (!has[static_cast<size_t>(pid)]) {
            adj[static_cast<size_t>(pid)] = std::move(g);
            has[static_cast<size_t>(pid)] = 1;
            return;
        }
        Array& acc = adj[static_cast<size_t>(pid)];
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    };

    for (int32_t id = output.id; id >= 0; --id) {
        if (!has[static_cast<size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) continue;
        const Array& g = adj[static_cast<size_t>(id)];
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::Add: {
                accumulate(n.parent0, reduce_to_shape(g, shape_of(n.parent0)));
                accumulate(n.parent1, reduce_to_shape(g, shape_of(n.parent1)));
                break;
            }
            case Op::Sub: {
                accumulate(n.parent0, reduce_to_shape(g, shape_of(n.parent0)));
                Array neg(g.shape());
                for (int64_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
                accumulate(n.parent1, reduce_to_shape(neg, shape_of(n.parent1)));
                break;
            }
            case Op::Mul: {
                const Array& a = value(n.parent0);
                const Array& b = value(n.parent1);
                accumulate(n.parent0,
                           reduce_to_shape(broadcast_binary(g, b, n.value.shape(),
                                                            [](double x, double y) { return x * y; }),
                                           a.shape()));
                accumulate(n.parent1,
                           reduce_to_shape(broadcast_binary(g, a, n.value.shape(),
                                                            [](double x, double y) { return x * y; }),
                                           b.shape()));
                break;
            }
            case Op::Div: {
                const Array& a = value(n.parent0);
                const Array& b = value(n.parent1);
                accumulate(n.parent0,
                           reduce_to_shape(broadcast_binary(g, b, n.value.shape(),
                                                            [](double x, double y) { return x / y; }),
                                           a.shape()));
                // d/db (a/b) = -a / b^2 = -value / b
                Array gb = broadcast_binary(g, n.value, n.value.shape(),
                                            [](double x, double v) { return x * v; });
                gb = broadcast_binary(gb, b, n.value.shape(),
                                      [](double x, double y) { return -x / y; });
                accumulate(n.parent1, reduce_to_shape(gb, b.shape()));
                break;
            }
            case Op::MatMul: {
                const Array& a = value(n.parent0);
                const Array& b = value(n.parent1);
                const int64_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
                if (nodes_[static_cast<size_t>(n.parent0)].needs_grad) {
                    Array da({m, k});
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < p; ++j) {
                            const double gv = g[i * p + j];
                            const double* b_col = b.data() + j;
                            double* da_row = da.data() + i * k;
                            for (int64_t kk = 0; kk < k; ++kk) da_row[kk] += gv * b_col[kk * p];
                        }
                    accumulate(n.parent0, std::move(da));
                }
                if (nodes_[static_cast<size_t>(n.parent1)].needs_grad) {
                    Array db({k, p});
                    for (int64_t i = 0; i < m; ++i) {
                        const double* a_row = a.data() + i * k;
                        const double* g_row = g.data() + i * p;
                        for (int64_t kk = 0; kk < k; ++kk) {
                            const double av = a_row[kk];
                            double* db_row = db.data() + kk * p;
                            for (int64_t j = 0; j < p; ++j) db_row[j] += av * g_row[j];
                        }
                    }
                    accumulate(n.parent1, std::move(db));
                }
                break;
            }
            case Op::Relu: {
                const Array& a = value(n.parent0);
                Array da(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) da[i] = a[i] > 0.0 ? g[i] : 0.0;
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Sigmoid: {
                Array da(n.value.shape());
                for (int64_t i = 0; i < n.value.numel(); ++i) {
                    const double s = n.value[i];
                    da[i] = g[i] * s * (1.0 - s);
                }
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Tanh: {
                Array da(n.value.shape());
                for (int64_t i = 0; i < n.value.numel(); ++i) {
                    const double t = n.value[i];
                    da[i] = g[i] * (1.0 - t * t);
                }
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Pow: {
                const Array& a = value(n.parent0);
                const double e = n.d0;
                Array da(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) {
                    const double x = a[i];
                    // subgradient 0 at x = 0 when the true derivative blows up
                    if (x == 0.0 && e < 1.0)
                        da[i] = 0.0;
                    else
                        da[i] = g[i] * e * std::pow(x, e - 1.0);
                }
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Exp: {
                Array da(n.value.shape());
                for (int64_t i = 0; i < n.value.numel(); ++i) da[i] = g[i] * n.value[i];
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Log: {
                const Array& a = value(n.parent0);
                Array da(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) da[i] = g[i] / a[i];
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const Array& a = value(n.parent0);
                Array da(a.shape());
                if (n.i1 == 0) { // full reduction
                    const double gv =
                        n.op == Op::Mean ? g[0] / static_cast<double>(a.numel()) : g[0];
                    for (int64_t i = 0; i < a.numel(); ++i) da[i] = gv;
                } else {
                    const AxisSplit sp = split_axis(a.shape(), static_cast<int>(n.i0));
                    const double inv = n.op == Op::Mean ? 1.0 / static_cast<double>(sp.dim) : 1.0;
                    for (int64_t o = 0; o < sp.outer; ++o)
                        for (int64_t d = 0; d < sp.dim; ++d)
                            for (int64_t in = 0; in < sp.inner; ++in)
                                da[(o * sp.dim + d) * sp.inner + in] = g[o * sp.inner + in] * inv;
                }
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::L1Norm: {
                const Array& a = value(n.parent0);
                Array da(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i) {
                    const double s = a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
                    da[i] = g[0] * s;
                }
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::L2Norm: {
                const Array& a = value(n.parent0);
                const double norm = n.value[0];
                Array da(a.shape());
                if (norm > 0.0)
                    for (int64_t i = 0; i < a.numel(); ++i) da[i] = g[0] * a[i] / norm;
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Dot: {
                const Array& a = value(n.parent0);
                const Array& b = value(n.parent1);
                if (nodes_[static_cast<size_t>(n.parent0)].needs_grad) {
                    Array da(a.shape());
                    for (int64_t i = 0; i < a.numel(); ++i) da[i] = g[0] * b[i];
                    accumulate(n.parent0, std::move(da));
                }
                if (nodes_[static_cast<size_t>(n.parent1)].needs_grad) {
                    Array db(b.shape());
                    for (int64_t i = 0; i < b.numel(); ++i) db[i] = g[0] * a[i];
                    accumulate(n.parent1, std::move(db));
                }
                break;
            }
            case Op::Broadcast: {
                accumulate(n.parent0, reduce_to_shape(g, shape_of(n.parent0)));
                break;
            }
            case Op::Reshape: {
                accumulate(n.parent0, Array(shape_of(n.parent0), g.vec()));
                break;
            }
            case Op::Slice: {
                const Array& a = value(n.parent0);
                const AxisSplit sp = split_axis(a.shape(), static_cast<int>(n.i0));
                const int64_t start = n.i1, len = n.i2;
                Array da(a.shape());
                for (int64_t o = 0; o < sp.outer; ++o)
                    for (int64_t d = 0; d < len; ++d)
                        for (int64_t in = 0; in < sp.inner; ++in)
                            da[(o * sp.dim + start + d) * sp.inner + in] =
                                g[(o * len + d) * sp.inner + in];
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Gather: {
                Array da(shape_of(n.parent0));
                for (size_t i = 0; i < n.indices.size(); ++i)
                    da[n.indices[i]] += g[static_cast<int64_t>(i)];
                accumulate(n.parent0, std::move(da));
                break;
            }
            case Op::Clamp: {
                const Array& a = value(n.parent0);
                Array da(a.shape());
                for (int64_t i = 0; i < a.numel(); ++i)
                    da[i] = (a[i] > n.d0 && a[i] < n.d1) ? g[i] : 0.0;
                accumulate(n.parent0, std::move(da));
                break;
            }
        }
    }

    Gradients out;
    for (const Var& v : wrt) {
        if (has[static_cast<size_t>(v.id)])
            out.by_id.emplace(v.id, adj[static_cast<size_t>(v.id)]);
        else
            out.by_id.emplace(v.id, Array::zeros(v.shape()));
    }
    return out;
}

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape->div(a, b); }
Var operator+(Var a, double b) { return a.tape->add(a, a.tape->constant(b)); }
Var operator-(Var a, double b) { return a.tape->sub(a, a.tape->constant(b)); }
Var operator*(Var a, double b) { return a.tape->mul(a, a.tape->constant(b)); }
Var operator/(Var a, double b) { return a.tape->div(a, a.tape->constant(b)); }
Var operator+(double a, Var b) { return b.tape->add(b.tape->constant(a), b); }
Var operator-(double a, Var b) { return b.tape->sub(b.tape->constant(a), b); }
Var operator*(double a, Var b) { return b.tape->mul(b.tape->constant(a), b); }
Var operator/(double a, Var b) { return b.tape->div(b.tape->constant(a), b); }
Var operator-(Var a) { return a.tape->sub(a.tape->constant(0.0), a); }

Var softplus(Var a) { return a.tape->log(a.tape->exp(a) + 1.0); }
Var sqrt(Var a) { return a.tape->pow(a, 0.5); }
Var square(Var a) { return a.tape->mul(a, a); }

Var compose3(Var x, Var y, Var z) {
    Tape& t = *x.tape;
    Var ex = t.constant(Array({3}, {1.0, 0.0, 0.0}));
    Var ey = t.constant(Array({3}, {0.0, 1.0, 0.0}));
    Var ez = t.constant(Array({3}, {0.0, 0.0, 1.0}));
    return ex * x + ey * y + ez * z;
}

Var cross3(Var a, Var b) {
    Tape& t = *a.tape;
    auto c = [&](Var v, int64_t i) { return t.slice(v, 0, i, 1); };
    Var cx = c(a, 1) * c(b, 2) - c(a, 2) * c(b, 1);
    Var cy = c(a, 2) * c(b, 0) - c(a, 0) * c(b, 2);
    Var cz = c(a, 0) * c(b, 1) - c(a, 1) * c(b, 0);
    return compose3(t.reshape(cx, {}), t.reshape(cy, {}), t.reshape(cz, {}));
}

Var normalize3(Var a) { return a / a.tape->l2_norm(a); }

Var take_rows(Var a, const std::vector<int64_t>& rows) {
    const Shape& s = a.shape();
    if (s.size() != 2) fail("take_rows: expects a rank-2 array, got " + shape_str(s));
    const int64_t cols = s[1];
    std::vector<int64_t> idx;
    idx.reserve(rows.size() * static_cast<size_t>(cols));
    for (int64_t r : rows)
        for (int64_t c = 0; c < cols; ++c) idx.push_back(r * cols + c);
    return a.tape->gather(a, std::move(idx), {static_cast<int64_t>(rows.size()), cols});
}

} // namespace facefit::ad
