#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pifem/sparse.hpp"

namespace pifem {

using Mat = Eigen::MatrixXd;

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A verified adjoint pair wrapping an operator that lives outside the tape
/// (assembled finite-element matrices, in practice). forward maps R^cols ->
/// R^rows; adjoint must satisfy <A u, v> = <u, adjoint(v)> for all u, v.
struct LinearOperator {
    std::function<Vec(const Vec&)> forward;
    std::function<Vec(const Vec&)> adjoint;
    int rows = 0;
    int cols = 0;
    std::string name;
};

LinearOperator make_operator(const SparseMatrix& matrix, std::string name = "sparse");

/// Handle to a tape node. Only meaningful together with the tape that
/// produced it.
struct Var {
    int id = -1;
};

/// Dynamic computation graph over dense 64-bit matrices.
///
/// Recording is define-by-run: every operation appends a node holding its
/// forward value, so insertion order is a topological order. backward()
/// expresses every derivative with these same primitives and appends the
/// resulting nodes to the tape, which is what makes gradients themselves
/// differentiable (gradients of gradients need no extra machinery). The
/// create_graph flag is therefore about intent only; this implementation
/// always records, and the flag is kept so call sites document whether they
/// differentiate through the result.
///
/// A tape is single-threaded; distinct tapes are independent.
class Tape {
public:
    Var leaf(const Mat& values);      // differentiable input
    Var constant(const Mat& values);  // non-differentiable input

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double factor);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, int offset, int width);
    Var gather_rows(Var a, const std::vector<int>& rows);
    /// segments must be sorted, one id per input row, covering 0..n_segments-1.
    Var segment_max(Var a, const std::vector<int>& segments, int n_segments);
    Var segment_mean(Var a, const std::vector<int>& segments, int n_segments);
    Var relu(Var a);  // subgradient at 0 is 0
    Var tanh(Var a);
    Var square(Var a);
    Var abs(Var a);  // subgradient at 0 is 0
    Var mean_reduce(Var a);
    Var sum_reduce(Var a);
    /// Adds a 1 x cols row vector to every row of a.
    Var add_rowvec(Var a, Var row);
    /// Forward applies op.forward; the backward rule routes the cotangent
    /// through op.adjoint. Since the operator is linear that rule is itself
    /// an external_linear node, so differentiating through it needs no
    /// further solver calls. op must outlive the tape.
    Var external_linear(const LinearOperator& op, Var u);

    const Mat& value(Var v) const { return node(v.id).value; }
    int rows(Var v) const { return static_cast<int>(node(v.id).value.rows()); }
    int cols(Var v) const { return static_cast<int>(node(v.id).value.cols()); }
    size_t size() const { return nodes_.size(); }

    /// Reverse accumulation from a scalar loss. Returns one gradient per wrt
    /// entry, shaped like it. A wrt leaf with no path to the loss yields a
    /// zero gradient (not an error).
    std::vector<Var> backward(Var loss, const std::vector<Var>& wrt, bool create_graph = false);

private:
    enum class Op : uint8_t {
        Leaf, Constant, Add, Sub, Mul, Scale, MatMul, Transpose, ConcatCols, SliceCols,
        GatherRows, ScatterAddRows, SegmentMax, SegmentMean, Relu, Tanh, Square, Abs,
        MeanReduce, SumReduce, Broadcast, AddRowVec, ExternalLinear
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Mat value;
        double factor = 0.0;               // Scale
        int i0 = 0, i1 = 0;                // SliceCols offset/width, scatter target rows
        std::vector<int> indices;          // gather/scatter rows or segment ids
        std::vector<int> argmax;           // SegmentMax winner row per (segment, column)
        const LinearOperator* ext = nullptr;
        bool adjoint_side = false;
    };

    Var scatter_add_rows(Var a, const std::vector<int>& rows, int n_rows);
    Var broadcast(Var scalar, int rows, int cols);

    const Node& node(int id) const;
    Var push(Node n);
    void check_same_shape(const char* what, Var a, Var b) const;

    // Appends the backward rule of node id given cotangent g, returning the
    // contribution per input (invalid Var for inputs that need no gradient).
    std::array<Var, 2> backward_rule(int id, Var g, const std::vector<char>& needed);

    std::vector<Node> nodes_;
};

/// Summed double-backward trick for PDE-style residuals: with out = model(X),
/// d_c = d(sum out)/dX[:,c] and the result is sum_c d(sum d_c)/dX[:,c].
/// For a pointwise model this is the per-row laplacian of the network
/// function in the chosen columns; for graph models it is the same quantity
/// standard collocation tooling computes, cross-terms included. The result is
/// a tape Variable, so losses built from it remain trainable.
Var input_laplacian(Tape& tape, const std::function<Var(Tape&, Var)>& model, Var features,
                    const std::array<int, 3>& coord_cols = {0, 1, 2});

struct GradCheckOptions {
    double epsilon = 1e-5;
    /// 0 probes every component; otherwise a deterministic seeded sample of
    /// this many components is checked.
    int max_probes = 0;
    uint64_t seed = 7;
};

/// Central-difference check of backward() for a scalar loss built from one
/// leaf. Returns max over probed components of |g_ad - g_fd| / max(1,|g_fd|).
/// Probe points sitting exactly on a relu/abs kink are the caller's problem:
/// keep inputs off the kinks (random inputs are, almost surely).
double grad_check(const std::function<Var(Tape&, Var)>& build_loss, const Mat& leaf_values,
                  const GradCheckOptions& options = {});

}  // namespace pifem
