#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "facefit/array.hpp"

namespace facefit::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; the tape owns all storage.
struct Var {
    Tape* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Array& val() const;
    const Shape& shape() const;
    int64_t numel() const;
    double item() const;
};

struct Gradients {
    std::unordered_map<int32_t, Array> by_id;

    const Array& wrt(Var v) const;
    bool has(Var v) const { return by_id.count(v.id) != 0; }
};

// Reverse-mode autodiff tape over dense double arrays. Nodes are recorded in
// topological order (parents always precede children) and values are computed
// eagerly at record time. backward() walks the record in reverse and
// accumulates vector-Jacobian products; it never mutates the tape, so repeated
// passes over the same record are bit-identical.
class Tape {
public:
    enum class Op : uint8_t {
        Leaf,
        Const,
        Add,
        Sub,
        Mul,
        Div,
        MatMul,
        Relu,
        Sigmoid,
        Tanh,
        Pow,
        Exp,
        Log,
        Sum,      // full or one axis
        Mean,     // full or one axis
        L1Norm,
        L2Norm,
        Dot,
        Broadcast,
        Reshape,
        Slice,
        Gather,
        Clamp,
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Differentiable input.
    Var leaf(Array v, std::string name = {});
    // Recorded value that never receives a gradient.
    Var constant(Array v);
    Var constant(double v);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var matmul(Var a, Var b);                       // (M,K)x(K,N)
    Var relu(Var a);                                // elementwise max(x, 0)
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var pow(Var a, double exponent);
    Var exp(Var a);
    Var log(Var a);
    Var sum(Var a);                                 // all elements -> scalar
    Var sum(Var a, int axis);                       // reduce one axis
    Var mean(Var a);
    Var mean(Var a, int axis);
    Var l1_norm(Var a);                             // sum |x| -> scalar
    Var l2_norm(Var a);                             // sqrt(sum x^2) -> scalar
    Var dot(Var a, Var b);                          // 1-D vectors -> scalar
    Var broadcast_to(Var a, Shape target);
    Var reshape(Var a, Shape target);
    Var slice(Var a, int axis, int64_t start, int64_t len);
    Var gather(Var a, std::vector<int64_t> flat_indices, Shape out_shape);
    Var clamp(Var a, double lo, double hi);

    // d(output)/d(input) for each requested leaf; output must hold one value.
    Gradients backward(Var output, const std::vector<Var>& wrt) const;

    const Array& value(int32_t id) const;
    const Shape& shape_of(int32_t id) const { return value(id).shape(); }
    bool is_leaf(int32_t id) const;
    size_t size() const { return nodes_.size(); }

    static const char* op_name(Op op);

private:
    struct Node {
        Op op;
        int32_t parent0 = -1;
        int32_t parent1 = -1;
        Array value;
        bool needs_grad = false;
        // op payload
        double d0 = 0.0;
        double d1 = 0.0;
        int64_t i0 = 0;
        int64_t i1 = 0;
        int64_t i2 = 0;
        std::vector<int64_t> indices;
        std::string name;
    };

    Var push(Node n);
    const Node& node(int32_t id) const;
    Var check_same_tape(Var a, Var b, const char* op) const;
    Var reduce(Op op, Var a, int axis);

    std::vector<Node> nodes_;
};

// Operator sugar; scalars become recorded constants.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator+(Var a, double b);
Var operator-(Var a, double b);
Var operator*(Var a, double b);
Var operator/(Var a, double b);
Var operator+(double a, Var b);
Var operator-(double a, Var b);
Var operator*(double a, Var b);
Var operator/(double a, Var b);
Var operator-(Var a);

// Composite helpers built from the primitive set.
Var softplus(Var a);                       // log(1 + exp(x))
Var sqrt(Var a);                           // pow(x, 0.5)
Var square(Var a);
Var compose3(Var x, Var y, Var z);         // three scalars -> (3,)
Var cross3(Var a, Var b);                  // (3,) x (3,) -> (3,)
Var normalize3(Var a);                     // (3,) / ||.||
Var take_rows(Var a, const std::vector<int64_t>& rows); // rows of a rank-2 array

} // namespace facefit::ad
