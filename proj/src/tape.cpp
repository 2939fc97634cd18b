#include "pifem/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include "pifem/rng.hpp"

namespace pifem {

LinearOperator make_operator(const SparseMatrix& matrix, std::string name) {
    auto shared = std::make_shared<const SparseMatrix>(matrix);
    LinearOperator op;
    op.rows = shared->rows;
    op.cols = shared->cols;
    op.name = std::move(name);
    op.forward = [shared](const Vec& u) { return shared->apply(u); };
    op.adjoint = [shared](const Vec& v) { return shared->apply_adjoint(v); };
    return op;
}

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw GraphError("invalid tape node id");
    return nodes_[id];
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_same_shape(const char* what, Var a, Var b) const {
    if (rows(a) != rows(b) || cols(a) != cols(b))
        throw GraphError(std::string(what) + ": shape mismatch " + std::to_string(rows(a)) + "x" +
                         std::to_string(cols(a)) + " vs " + std::to_string(rows(b)) + "x" +
                         std::to_string(cols(b)));
}

Var Tape::leaf(const Mat& values) {
    Node n;
    n.op = Op::Leaf;
    n.value = values;
    return push(std::move(n));
}

Var Tape::constant(const Mat& values) {
    Node n;
    n.op = Op::Constant;
    n.value = values;
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    check_same_shape("add", a, b);
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = node(a.id).value + node(b.id).value;
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_same_shape("sub", a, b);
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = node(a.id).value - node(b.id).value;
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.value = node(a.id).value.cwiseProduct(node(b.id).value);
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.factor = factor;
    n.value = factor * node(a.id).value;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    if (cols(a) != rows(b))
        throw GraphError("matmul: inner dimensions " + std::to_string(cols(a)) + " vs " +
                         std::to_string(rows(b)));
    Node n;
    n.op = Op::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value.noalias() = node(a.id).value * node(b.id).value;
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.value = node(a.id).value.transpose();
    return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
    if (rows(a) != rows(b)) throw GraphError("concat_cols: row counts differ");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.id;
    n.b = b.id;
    n.value.resize(rows(a), cols(a) + cols(b));
    n.value << node(a.id).value, node(b.id).value;
    return push(std::move(n));
}

Var Tape::slice_cols(Var a, int offset, int width) {
    if (offset < 0 || width <= 0 || offset + width > cols(a))
        throw GraphError("slice_cols: range [" + std::to_string(offset) + "," +
                         std::to_string(offset + width) + ") outside 0.." + std::to_string(cols(a)));
    Node n;
    n.op = Op::SliceCols;
    n.a = a.id;
    n.i0 = offset;
    n.i1 = width;
    n.value = node(a.id).value.middleCols(offset, width);
    return push(std::move(n));
}

Var Tape::gather_rows(Var a, const std::vector<int>& rows_idx) {
    const Mat& src = node(a.id).value;
    Node n;
    n.op = Op::GatherRows;
    n.a = a.id;
    n.indices = rows_idx;
    n.value.resize(static_cast<int>(rows_idx.size()), src.cols());
    for (int r = 0; r < static_cast<int>(rows_idx.size()); ++r) {
        const int j = rows_idx[r];
        if (j < 0 || j >= src.rows()) throw GraphError("gather_rows: index " + std::to_string(j) + " out of range");
        n.value.row(r) = src.row(j);
    }
    return push(std::move(n));
}

Var Tape::scatter_add_rows(Var a, const std::vector<int>& rows_idx, int n_rows) {
    const Mat& src = node(a.id).value;
    if (static_cast<int>(rows_idx.size()) != src.rows())
        throw GraphError("scatter_add_rows: index count != rows");
    Node n;
    n.op = Op::ScatterAddRows;
    n.a = a.id;
    n.indices = rows_idx;
    n.i0 = n_rows;
    n.value = Mat::Zero(n_rows, src.cols());
    for (int r = 0; r < src.rows(); ++r) {
        const int j = rows_idx[r];
        if (j < 0 || j >= n_rows) throw GraphError("scatter_add_rows: index out of range");
        n.value.row(j) += src.row(r);
    }
    return push(std::move(n));
}

namespace {
void check_segments(const std::vector<int>& seg, int rows, int n_segments) {
    if (static_cast<int>(seg.size()) != rows)
        throw GraphError("segment_reduce: one segment id per row required");
    if (rows == 0 || n_segments <= 0) throw GraphError("segment_reduce: empty input");
    if (seg.front() != 0 || seg.back() != n_segments - 1)
        throw GraphError("segment_reduce: empty segment (ids must cover 0.." +
                         std::to_string(n_segments - 1) + ")");
    for (size_t i = 1; i < seg.size(); ++i) {
        const int step = seg[i] - seg[i - 1];
        if (step < 0) throw GraphError("segment_reduce: segment ids must be sorted");
        if (step > 1) throw GraphError("segment_reduce: empty segment " + std::to_string(seg[i - 1] + 1));
    }
}
}  // namespace

Var Tape::segment_max(Var a, const std::vector<int>& segments, int n_segments) {
    const Mat& src = node(a.id).value;
    check_segments(segments, static_cast<int>(src.rows()), n_segments);
    Node n;
    n.op = Op::SegmentMax;
    n.a = a.id;
    n.indices = segments;
    n.value.resize(n_segments, src.cols());
    n.argmax.assign(static_cast<size_t>(n_segments) * src.cols(), -1);
    // Ascending row scan with strict comparison: ties resolve to the first
    // occurrence, keeping the backward routing deterministic.
    for (int c = 0; c < src.cols(); ++c) {
        for (int r = 0; r < src.rows(); ++r) {
            const int s = segments[r];
            int& arg = n.argmax[static_cast<size_t>(c) * n_segments + s];
            if (arg < 0 || src(r, c) > n.value(s, c)) {
                n.value(s, c) = src(r, c);
                arg = r;
            }
        }
    }
    return push(std::move(n));
}

Var Tape::segment_mean(Var a, const std::vector<int>& segments, int n_segments) {
    const Mat& src = node(a.id).value;
    check_segments(segments, static_cast<int>(src.rows()), n_segments);
    Node n;
    n.op = Op::SegmentMean;
    n.a = a.id;
    n.indices = segments;
    n.value = Mat::Zero(n_segments, src.cols());
    std::vector<int> count(n_segments, 0);
    for (int r = 0; r < src.rows(); ++r) {
        n.value.row(segments[r]) += src.row(r);
        ++count[segments[r]];
    }
    for (int s = 0; s < n_segments; ++s) n.value.row(s) /= count[s];
    return push(std::move(n));
}

Var Tape::relu(Var a) {
    Node n;
    n.op = Op::Relu;
    n.a = a.id;
    n.value = node(a.id).value.cwiseMax(0.0);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.value = node(a.id).value.array().tanh();
    return push(std::move(n));
}

Var Tape::square(Var a) {
    Node n;
    n.op = Op::Square;
    n.a = a.id;
    n.value = node(a.id).value.array().square();
    return push(std::move(n));
}

Var Tape::abs(Var a) {
    Node n;
    n.op = Op::Abs;
    n.a = a.id;
    n.value = node(a.id).value.array().abs();
    return push(std::move(n));
}

Var Tape::mean_reduce(Var a) {
    Node n;
    n.op = Op::MeanReduce;
    n.a = a.id;
    n.value = Mat::Constant(1, 1, node(a.id).value.mean());
    return push(std::move(n));
}

Var Tape::sum_reduce(Var a) {
    Node n;
    n.op = Op::SumReduce;
    n.a = a.id;
    n.value = Mat::Constant(1, 1, node(a.id).value.sum());
    return push(std::move(n));
}

Var Tape::broadcast(Var scalar, int r, int c) {
    if (rows(scalar) != 1 || cols(scalar) != 1) throw GraphError("broadcast: input must be 1x1");
    Node n;
    n.op = Op::Broadcast;
    n.a = scalar.id;
    n.value = Mat::Constant(r, c, node(scalar.id).value(0, 0));
    return push(std::move(n));
}

Var Tape::add_rowvec(Var a, Var row) {
    if (rows(row) != 1 || cols(row) != cols(a))
        throw GraphError("add_rowvec: need a 1x" + std::to_string(cols(a)) + " row");
    Node n;
    n.op = Op::AddRowVec;
    n.a = a.id;
    n.b = row.id;
    n.value = node(a.id).value.rowwise() + node(row.id).value.row(0);
    return push(std::move(n));
}

Var Tape::external_linear(const LinearOperator& op, Var u) {
    if (cols(u) != 1 || rows(u) != op.cols)
        throw GraphError("external_linear(" + op.name + "): expected " + std::to_string(op.cols) +
                         "x1 input, got " + std::to_string(rows(u)) + "x" + std::to_string(cols(u)));
    Node n;
    n.op = Op::ExternalLinear;
    n.a = u.id;
    n.ext = &op;
    n.adjoint_side = false;
    n.value = op.forward(node(u.id).value.col(0));
    return push(std::move(n));
}

std::array<Var, 2> Tape::backward_rule(int id, Var g, const std::vector<char>& needed) {
    // Copy everything we use out of the node first: every op below appends
    // nodes and may reallocate nodes_.
    const Op op = nodes_[id].op;
    const int ia = nodes_[id].a;
    const int ib = nodes_[id].b;
    const double factor = nodes_[id].factor;
    const int i0 = nodes_[id].i0, i1 = nodes_[id].i1;
    const LinearOperator* ext = nodes_[id].ext;
    const bool adjoint_side = nodes_[id].adjoint_side;

    const bool need_a = ia >= 0 && needed[ia];
    const bool need_b = ib >= 0 && needed[ib];
    std::array<Var, 2> out = {Var{}, Var{}};
    if (!need_a && !need_b) return out;

    switch (op) {
        case Op::Leaf:
        case Op::Constant:
            break;
        case Op::Add:
            if (need_a) out[0] = g;
            if (need_b) out[1] = g;
            break;
        case Op::Sub:
            if (need_a) out[0] = g;
            if (need_b) out[1] = scale(g, -1.0);
            break;
        case Op::Mul:
            if (need_a) out[0] = mul(g, Var{ib});
            if (need_b) out[1] = mul(g, Var{ia});
            break;
        case Op::Scale:
            out[0] = scale(g, factor);
            break;
        case Op::MatMul:
            if (need_a) out[0] = matmul(g, transpose(Var{ib}));
            if (need_b) out[1] = matmul(transpose(Var{ia}), g);
            break;
        case Op::Transpose:
            out[0] = transpose(g);
            break;
        case Op::ConcatCols: {
            const int wa = static_cast<int>(nodes_[ia].value.cols());
            const int wb = static_cast<int>(nodes_[ib].value.cols());
            if (need_a) out[0] = slice_cols(g, 0, wa);
            if (need_b) out[1] = slice_cols(g, wa, wb);
            break;
        }
        case Op::SliceCols: {
            const int parent_rows = static_cast<int>(nodes_[ia].value.rows());
            const int parent_cols = static_cast<int>(nodes_[ia].value.cols());
            Var full = g;
            if (i0 > 0) full = concat_cols(constant(Mat::Zero(parent_rows, i0)), full);
            if (i0 + i1 < parent_cols)
                full = concat_cols(full, constant(Mat::Zero(parent_rows, parent_cols - i0 - i1)));
            out[0] = full;
            break;
        }
        case Op::GatherRows: {
            const std::vector<int> idx = nodes_[id].indices;
            const int parent_rows = static_cast<int>(nodes_[ia].value.rows());
            out[0] = scatter_add_rows(g, idx, parent_rows);
            break;
        }
        case Op::ScatterAddRows: {
            const std::vector<int> idx = nodes_[id].indices;
            out[0] = gather_rows(g, idx);
            break;
        }
        case Op::SegmentMax: {
            const std::vector<int> seg = nodes_[id].indices;
            const std::vector<int> arg = nodes_[id].argmax;
            const int in_rows = static_cast<int>(nodes_[ia].value.rows());
            const int n_cols = static_cast<int>(nodes_[id].value.cols());
            const int n_seg = static_cast<int>(nodes_[id].value.rows());
            Mat mask = Mat::Zero(in_rows, n_cols);
            for (int c = 0; c < n_cols; ++c)
                for (int s = 0; s < n_seg; ++s) mask(arg[static_cast<size_t>(c) * n_seg + s], c) = 1.0;
            out[0] = mul(gather_rows(g, seg), constant(mask));
            break;
        }
        case Op::SegmentMean: {
            const std::vector<int> seg = nodes_[id].indices;
            const int in_rows = static_cast<int>(nodes_[ia].value.rows());
            const int n_cols = static_cast<int>(nodes_[id].value.cols());
            const int n_seg = static_cast<int>(nodes_[id].value.rows());
            std::vector<int> count(n_seg, 0);
            for (int s : seg) ++count[s];
            Mat weight(in_rows, n_cols);
            for (int r = 0; r < in_rows; ++r) weight.row(r).setConstant(1.0 / count[seg[r]]);
            out[0] = mul(gather_rows(g, seg), constant(weight));
            break;
        }
        case Op::Relu: {
            Mat mask = (nodes_[ia].value.array() > 0.0).cast<double>();
            out[0] = mul(g, constant(mask));
            break;
        }
        case Op::Tanh: {
            const int r = static_cast<int>(nodes_[id].value.rows());
            const int c = static_cast<int>(nodes_[id].value.cols());
            Var one_minus_sq = sub(constant(Mat::Ones(r, c)), square(Var{id}));
            out[0] = mul(g, one_minus_sq);
            break;
        }
        case Op::Square:
            out[0] = mul(g, scale(Var{ia}, 2.0));
            break;
        case Op::Abs: {
            Mat sign = (nodes_[ia].value.array() > 0.0).cast<double>() -
                       (nodes_[ia].value.array() < 0.0).cast<double>();
            out[0] = mul(g, constant(sign));
            break;
        }
        case Op::MeanReduce: {
            const int r = static_cast<int>(nodes_[ia].value.rows());
            const int c = static_cast<int>(nodes_[ia].value.cols());
            out[0] = scale(broadcast(g, r, c), 1.0 / (static_cast<double>(r) * c));
            break;
        }
        case Op::SumReduce: {
            const int r = static_cast<int>(nodes_[ia].value.rows());
            const int c = static_cast<int>(nodes_[ia].value.cols());
            out[0] = broadcast(g, r, c);
            break;
        }
        case Op::Broadcast:
            out[0] = sum_reduce(g);
            break;
        case Op::AddRowVec: {
            const int r = static_cast<int>(nodes_[ia].value.rows());
            if (need_a) out[0] = g;
            if (need_b) out[1] = matmul(constant(Mat::Ones(1, r)), g);
            break;
        }
        case Op::ExternalLinear: {
            // The adjoint of the adjoint is the forward map, so this rule is
            // closed under repeated differentiation.
            Node n;
            n.op = Op::ExternalLinear;
            n.a = g.id;
            n.ext = ext;
            n.adjoint_side = !adjoint_side;
            const Vec cotangent = nodes_[g.id].value.col(0);
            n.value = n.adjoint_side ? ext->adjoint(cotangent) : ext->forward(cotangent);
            out[0] = push(std::move(n));
            break;
        }
    }
    return out;
}

std::vector<Var> Tape::backward(Var loss, const std::vector<Var>& wrt, bool /*create_graph*/) {
    const int entry = static_cast<int>(nodes_.size());
    if (loss.id < 0 || loss.id >= entry) throw GraphError("backward: loss is not on this tape");
    if (node(loss.id).value.rows() != 1 || node(loss.id).value.cols() != 1)
        throw GraphError("backward: loss must be a 1x1 scalar");
    for (Var w : wrt)
        if (w.id < 0 || w.id >= entry) throw GraphError("backward: wrt node is not on this tape");

    // needed = (reaches the loss) AND (reachable from some wrt node); the
    // cotangent sweep only walks that intersection.
    std::vector<char> reaches_loss(entry, 0);
    {
        std::vector<int> stack = {loss.id};
        reaches_loss[loss.id] = 1;
        while (!stack.empty()) {
            const int id = stack.back();
            stack.pop_back();
            for (int input : {nodes_[id].a, nodes_[id].b})
                if (input >= 0 && !reaches_loss[input]) {
                    reaches_loss[input] = 1;
                    stack.push_back(input);
                }
        }
    }
    std::vector<char> needed(entry, 0);
    for (Var w : wrt) needed[w.id] = 1;
    for (int id = 0; id < entry; ++id) {
        if (needed[id]) continue;
        const int a = nodes_[id].a, b = nodes_[id].b;
        if ((a >= 0 && needed[a]) || (b >= 0 && needed[b])) needed[id] = 1;
    }
    for (int id = 0; id < entry; ++id) needed[id] = needed[id] && reaches_loss[id];

    std::vector<int> grad(entry, -1);
    if (needed[loss.id]) grad[loss.id] = constant(Mat::Ones(1, 1)).id;

    for (int id = loss.id; id >= 0; --id) {
        if (grad[id] < 0) continue;
        const int ia = nodes_[id].a;
        const int ib = nodes_[id].b;
        const auto contribution = backward_rule(id, Var{grad[id]}, needed);
        for (int side = 0; side < 2; ++side) {
            const int input = side == 0 ? ia : ib;
            const Var c = contribution[side];
            if (c.id < 0) continue;
            grad[input] = grad[input] < 0 ? c.id : add(Var{grad[input]}, c).id;
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (Var w : wrt) {
        if (grad[w.id] >= 0)
            result.push_back(Var{grad[w.id]});
        else
            result.push_back(constant(Mat::Zero(nodes_[w.id].value.rows(), nodes_[w.id].value.cols())));
    }
    return result;
}

Var input_laplacian(Tape& tape, const std::function<Var(Tape&, Var)>& model, Var features,
                    const std::array<int, 3>& coord_cols) {
    Var out = model(tape, features);
    if (tape.cols(out) != 1) throw GraphError("input_laplacian: model output must be N x 1");
    for (int c : coord_cols)
        if (c < 0 || c >= tape.cols(features))
            throw GraphError("input_laplacian: coordinate column " + std::to_string(c) + " out of range");

    const Var summed = tape.sum_reduce(out);
    const Var grad = tape.backward(summed, {features}, true)[0];

    Var laplacian = tape.constant(Mat::Zero(tape.rows(features), 1));
    for (int c : coord_cols) {
        const Var d_c = tape.slice_cols(grad, c, 1);
        const Var second = tape.backward(tape.sum_reduce(d_c), {features}, true)[0];
        laplacian = tape.add(laplacian, tape.slice_cols(second, c, 1));
    }
    return laplacian;
}

double grad_check(const std::function<Var(Tape&, Var)>& build_loss, const Mat& leaf_values,
                  const GradCheckOptions& options) {
    if (!(options.epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

    Mat analytic;
    {
        Tape tape;
        const Var leaf = tape.leaf(leaf_values);
        const Var loss = build_loss(tape, leaf);
        analytic = tape.value(tape.backward(loss, {leaf})[0]);
    }

    const auto loss_at = [&](const Mat& x) {
        Tape tape;
        const Var leaf = tape.leaf(x);
        const Var loss = build_loss(tape, leaf);
        if (tape.rows(loss) != 1 || tape.cols(loss) != 1) throw GraphError("grad_check: loss must be scalar");
        return tape.value(loss)(0, 0);
    };

    const long n = static_cast<long>(leaf_values.size());
    std::vector<long> probes;
    if (options.max_probes <= 0 || options.max_probes >= n) {
        probes.resize(n);
        for (long i = 0; i < n; ++i) probes[i] = i;
    } else {
        std::set<long> chosen;
        Rng rng(options.seed);
        while (static_cast<int>(chosen.size()) < options.max_probes)
            chosen.insert(static_cast<long>(rng.below(static_cast<uint64_t>(n))));
        probes.assign(chosen.begin(), chosen.end());
    }

    double max_err = 0.0;
    for (long k : probes) {
        Mat x = leaf_values;
        x(k) += options.epsilon;
        const double plus = loss_at(x);
        x(k) = leaf_values(k) - options.epsilon;
        const double minus = loss_at(x);
        const double fd = (plus - minus) / (2.0 * options.epsilon);
        const double err = std::abs(analytic(k) - fd) / std::max(1.0, std::abs(fd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace pifem
