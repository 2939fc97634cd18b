#include <doctest.h>

#include <cmath>
#include <functional>

#include "pifem/fem.hpp"
#include "pifem/rng.hpp"
#include "pifem/tape.hpp"

using namespace pifem;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
}

Mat col(std::initializer_list<double> values) {
    Mat m(static_cast<int>(values.size()), 1);
    int i = 0;
    for (double v : values) m(i++, 0) = v;
    return m;
}

}  // namespace

TEST_CASE("primitive forward values") {
    Tape t;

    SUBCASE("relu") {
        const Var y = t.relu(t.leaf(col({-1.0, 0.0, 2.0})));
        CHECK(t.value(y)(0, 0) == 0.0);
        CHECK(t.value(y)(1, 0) == 0.0);
        CHECK(t.value(y)(2, 0) == 2.0);
    }
    SUBCASE("matmul against hand multiplication") {
        Mat a(2, 3), b(3, 2);
        a << 1, 2, 3, 4, 5, 6;
        b << 7, 8, 9, 10, 11, 12;
        const Mat c = t.value(t.matmul(t.leaf(a), t.leaf(b)));
        CHECK(c(0, 0) == 58.0);
        CHECK(c(0, 1) == 64.0);
        CHECK(c(1, 0) == 139.0);
        CHECK(c(1, 1) == 154.0);
    }
    SUBCASE("segment max with first-occurrence ties") {
        Mat v(4, 1);
        v << 3, 5, 2, 2;
        const Var y = t.segment_max(t.leaf(v), {0, 0, 1, 1}, 2);
        CHECK(t.value(y)(0, 0) == 5.0);
        CHECK(t.value(y)(1, 0) == 2.0);
    }
    SUBCASE("segment mean") {
        Mat v(3, 2);
        v << 3, 1, 5, 3, 2, 8;
        const Var y = t.segment_mean(t.leaf(v), {0, 0, 1}, 2);
        CHECK(t.value(y)(0, 0) == 4.0);
        CHECK(t.value(y)(0, 1) == 2.0);
        CHECK(t.value(y)(1, 0) == 2.0);
        CHECK(t.value(y)(1, 1) == 8.0);
    }
    SUBCASE("concat, slice, gather, rowvec") {
        Mat a(2, 2), b(2, 1), row(1, 3);
        a << 1, 2, 3, 4;
        b << 5, 6;
        row << 10, 20, 30;
        const Var cc = t.concat_cols(t.leaf(a), t.leaf(b));
        CHECK(t.cols(cc) == 3);
        CHECK(t.value(cc)(1, 2) == 6.0);
        const Var sl = t.slice_cols(cc, 1, 2);
        CHECK(t.value(sl)(0, 0) == 2.0);
        const Var gathered = t.gather_rows(cc, {1, 0, 1});
        CHECK(t.rows(gathered) == 3);
        CHECK(t.value(gathered)(0, 0) == 3.0);
        const Var shifted = t.add_rowvec(cc, t.leaf(row));
        CHECK(t.value(shifted)(0, 0) == 11.0);
        CHECK(t.value(shifted)(1, 2) == 36.0);
    }
    SUBCASE("reductions") {
        Mat a(2, 2);
        a << 1, 2, 3, 4;
        CHECK(t.value(t.mean_reduce(t.leaf(a)))(0, 0) == 2.5);
        CHECK(t.value(t.sum_reduce(t.leaf(a)))(0, 0) == 10.0);
    }
}

TEST_CASE("backward closed forms") {
    SUBCASE("mean of squares: gradient 2u/N") {
        Tape t;
        const Mat u0 = col({1.0, -2.0, 0.5, 3.0});
        const Var u = t.leaf(u0);
        const Var loss = t.mean_reduce(t.square(u));
        const Mat g = t.value(t.backward(loss, {u})[0]);
        for (int i = 0; i < 4; ++i) CHECK(g(i, 0) == 2.0 * u0(i, 0) / 4.0);
    }
    SUBCASE("sum of relu: subgradient mask") {
        Tape t;
        const Var u = t.leaf(col({-1.0, 2.0}));
        const Mat g = t.value(t.backward(t.sum_reduce(t.relu(u)), {u})[0]);
        CHECK(g(0, 0) == 0.0);
        CHECK(g(1, 0) == 1.0);
    }
    SUBCASE("relu subgradient at exactly zero is zero") {
        Tape t;
        const Var u = t.leaf(col({0.0}));
        CHECK(t.value(t.backward(t.sum_reduce(t.relu(u)), {u})[0])(0, 0) == 0.0);
    }
    SUBCASE("segment max routes cotangent to the first argmax only") {
        Tape t;
        Mat v(4, 1);
        v << 3, 5, 2, 2;  // segment 1 has a tie at rows 2,3
        const Var u = t.leaf(v);
        const Var loss = t.sum_reduce(t.segment_max(u, {0, 0, 1, 1}, 2));
        const Mat g = t.value(t.backward(loss, {u})[0]);
        CHECK(g(0, 0) == 0.0);
        CHECK(g(1, 0) == 1.0);
        CHECK(g(2, 0) == 1.0);  // first occurrence of the tie
        CHECK(g(3, 0) == 0.0);
    }
    SUBCASE("abs subgradient") {
        Tape t;
        const Var u = t.leaf(col({-2.0, 0.0, 3.0}));
        const Mat g = t.value(t.backward(t.sum_reduce(t.abs(u)), {u})[0]);
        CHECK(g(0, 0) == -1.0);
        CHECK(g(1, 0) == 0.0);
        CHECK(g(2, 0) == 1.0);
    }
    SUBCASE("matmul product rule") {
        Tape t;
        Rng rng(3);
        const Mat a0 = random_mat(2, 3, rng), b0 = random_mat(3, 2, rng);
        const Var a = t.leaf(a0), b = t.leaf(b0);
        const Var loss = t.sum_reduce(t.matmul(a, b));
        const auto grads = t.backward(loss, {a, b});
        // d(sum AB)/dA = ones * B^T, d/dB = A^T * ones
        const Mat ga = Mat::Ones(2, 2) * b0.transpose();
        const Mat gb = a0.transpose() * Mat::Ones(2, 2);
        CHECK((t.value(grads[0]) - ga).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((t.value(grads[1]) - gb).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("second-order differentiation through the tape") {
    SUBCASE("sum(tanh): analytic second derivative") {
        Tape t;
        const Mat x0 = col({0.0, 0.5, -1.2});
        const Var x = t.leaf(x0);
        const Var g1 = t.backward(t.sum_reduce(t.tanh(x)), {x}, true)[0];
        const Var g2 = t.backward(t.sum_reduce(g1), {x})[0];
        for (int i = 0; i < 3; ++i) {
            const double th = std::tanh(x0(i, 0));
            const double expected = -2.0 * th * (1.0 - th * th);
            CHECK(t.value(g2)(i, 0) == doctest::Approx(expected).epsilon(1e-12));
        }
        CHECK(t.value(g2)(0, 0) == 0.0);  // exactly zero at the origin
    }
    SUBCASE("third derivative still flows") {
        Tape t;
        const Var x = t.leaf(col({0.7}));
        const Var g1 = t.backward(t.sum_reduce(t.tanh(x)), {x}, true)[0];
        const Var g2 = t.backward(t.sum_reduce(g1), {x}, true)[0];
        const Var g3 = t.backward(t.sum_reduce(g2), {x})[0];
        const double th = std::tanh(0.7), s = 1.0 - th * th;
        // d3/dx3 tanh = -2 s^2 + 4 t^2 s
        CHECK(t.value(g3)(0, 0) ==
              doctest::Approx(-2.0 * s * s + 4.0 * th * th * s).epsilon(1e-12));
    }
}

TEST_CASE("closure: backward of every primitive is differentiable again") {
    Rng rng(5);
    const Mat a0 = random_mat(4, 3, rng);
    // each builder returns a scalar loss from the given leaf
    using Builder = std::function<Var(Tape&, Var)>;
    const std::vector<std::pair<const char*, Builder>> cases = {
        {"add", [&](Tape& t, Var a) { return t.sum_reduce(t.add(a, t.constant(a0))); }},
        {"sub", [&](Tape& t, Var a) { return t.sum_reduce(t.sub(t.constant(a0), a)); }},
        {"mul", [&](Tape& t, Var a) { return t.sum_reduce(t.mul(a, a)); }},
        {"scale", [&](Tape& t, Var a) { return t.sum_reduce(t.scale(a, -1.7)); }},
        {"matmul",
         [&](Tape& t, Var a) { return t.sum_reduce(t.matmul(a, t.transpose(a))); }},
        {"transpose", [&](Tape& t, Var a) { return t.sum_reduce(t.transpose(a)); }},
        {"concat_cols",
         [&](Tape& t, Var a) { return t.sum_reduce(t.concat_cols(a, t.square(a))); }},
        {"slice_cols", [&](Tape& t, Var a) { return t.sum_reduce(t.slice_cols(a, 1, 2)); }},
        {"gather_rows",
         [&](Tape& t, Var a) { return t.sum_reduce(t.gather_rows(a, {2, 0, 2, 3})); }},
        {"segment_max",
         [&](Tape& t, Var a) { return t.sum_reduce(t.segment_max(a, {0, 0, 1, 1}, 2)); }},
        {"segment_mean",
         [&](Tape& t, Var a) { return t.sum_reduce(t.segment_mean(a, {0, 1, 1, 1}, 2)); }},
        {"relu", [&](Tape& t, Var a) { return t.sum_reduce(t.relu(a)); }},
        {"tanh", [&](Tape& t, Var a) { return t.sum_reduce(t.tanh(a)); }},
        {"square", [&](Tape& t, Var a) { return t.sum_reduce(t.square(a)); }},
        {"abs", [&](Tape& t, Var a) { return t.sum_reduce(t.abs(a)); }},
        {"mean_reduce", [&](Tape& t, Var a) { return t.mean_reduce(a); }},
        {"add_rowvec",
         [&](Tape& t, Var a) {
             return t.sum_reduce(t.add_rowvec(a, t.constant(Mat::Ones(1, 3))));
         }},
    };
    for (const auto& [name, build] : cases) {
        CAPTURE(name);
        Tape t;
        const Var a = t.leaf(a0);
        const Var loss = build(t, a);
        const Var g = t.backward(loss, {a}, true)[0];
        CHECK(t.rows(g) == 4);
        CHECK(t.cols(g) == 3);
        const Var g2 = t.backward(t.sum_reduce(g), {a})[0];  // no throw, right shape
        CHECK(t.rows(g2) == 4);
        CHECK(t.cols(g2) == 3);
    }
}

TEST_CASE("external linear operator") {
    const Mesh mesh = generate_box_mesh(2, 2, 2);
    const SparseMatrix k = assemble_stiffness(mesh);
    const ResidualOperator r = build_residual_operator(mesh, k, assemble_lumped_mass(mesh));
    const LinearOperator rop = make_operator(r.matrix, "residual");

    SUBCASE("identity sparsity: forward and backward are the identity") {
        std::vector<SparseMatrix::Triplet> trips;
        for (int i = 0; i < 5; ++i) trips.push_back({i, i, 1.0});
        const SparseMatrix eye = SparseMatrix::from_triplets(5, 5, trips);
        const LinearOperator ident = make_operator(eye, "eye");
        Tape t;
        Rng rng(9);
        const Mat u0 = random_mat(5, 1, rng);
        const Var u = t.leaf(u0);
        const Var y = t.external_linear(ident, u);
        CHECK((t.value(y) - u0).cwiseAbs().maxCoeff() == 0.0);
        const Mat g = t.value(t.backward(t.sum_reduce(y), {u})[0]);
        CHECK((g.array() - 1.0).abs().maxCoeff() == 0.0);
    }

    SUBCASE("linearity") {
        Rng rng(13);
        const Mat u0 = random_mat(27, 1, rng), v0 = random_mat(27, 1, rng);
        const double alpha = 1.3, beta = -0.4;
        Tape t;
        const Var combo = t.external_linear(rop, t.add(t.scale(t.leaf(u0), alpha), t.scale(t.leaf(v0), beta)));
        const Var parts = t.add(t.scale(t.external_linear(rop, t.leaf(u0)), alpha),
                                t.scale(t.external_linear(rop, t.leaf(v0)), beta));
        const Mat diff = t.value(combo) - t.value(parts);
        CHECK(diff.cwiseAbs().maxCoeff() <=
              1e-13 * std::max(1.0, t.value(parts).cwiseAbs().maxCoeff()));
    }

    SUBCASE("gradient of mean((R u)^2) equals (2/rows) R^T R u and matches finite differences") {
        Rng rng(17);
        const Mat u0 = random_mat(27, 1, rng);
        Tape t;
        const Var u = t.leaf(u0);
        const Var loss = t.mean_reduce(t.square(t.external_linear(rop, u)));
        const Mat g = t.value(t.backward(loss, {u})[0]);

        const Vec ru = r.matrix.apply(u0.col(0));
        const Vec expected = (2.0 / r.matrix.rows) * r.matrix.apply_adjoint(ru);
        CHECK((g.col(0) - expected).cwiseAbs().maxCoeff() < 1e-13);

        const double fd_err = grad_check(
            [&](Tape& tape, Var leaf) {
                return tape.mean_reduce(tape.square(tape.external_linear(rop, leaf)));
            },
            u0, {1e-6, 0, 0});
        CHECK(fd_err < 1e-6);
    }

    SUBCASE("adjoint routes gradient outward to a Dirichlet-adjacent node") {
        // interior-supported input, but the loss gradient reaches boundary nodes
        int center = -1, face = -1;
        for (int i = 0; i < mesh.node_count(); ++i) {
            const auto& p = mesh.nodes[i];
            if (p[0] == 0.5 && p[1] == 0.5 && p[2] == 0.5) center = i;
            if (p[0] == 0.0 && p[1] == 0.5 && p[2] == 0.5) face = i;  // on the x=0 patch
        }
        REQUIRE(center >= 0);
        REQUIRE(face >= 0);
        Mat u0 = Mat::Zero(27, 1);
        u0(center, 0) = 1.0;
        Tape t;
        const Var u = t.leaf(u0);
        const Var loss = t.mean_reduce(t.square(t.external_linear(rop, u)));
        const Mat g = t.value(t.backward(loss, {u})[0]);
        CHECK(g(face, 0) != 0.0);
    }

    SUBCASE("dimension mismatch") {
        Tape t;
        CHECK_THROWS_AS(t.external_linear(rop, t.leaf(Mat::Zero(5, 1))), GraphError);
        CHECK_THROWS_AS(t.external_linear(rop, t.leaf(Mat::Zero(27, 2))), GraphError);
    }

    SUBCASE("double backward through the external operator") {
        Rng rng(21);
        const Mat u0 = random_mat(27, 1, rng);
        Tape t;
        const Var u = t.leaf(u0);
        const Var loss = t.mean_reduce(t.square(t.external_linear(rop, u)));
        const Var g = t.backward(loss, {u}, true)[0];
        const Var gg = t.backward(t.sum_reduce(g), {u})[0];
        // grad = (2/m) R^T R u, so its sum-gradient is (2/m) R^T R 1
        const Vec expected =
            (2.0 / r.matrix.rows) * r.matrix.apply_adjoint(r.matrix.apply(Vec::Ones(27)));
        CHECK((t.value(gg).col(0) - expected).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("input laplacian") {
    SUBCASE("pointwise square of the first column gives exactly 2") {
        Tape t;
        Rng rng(31);
        const Mat x0 = random_mat(12, 3, rng);
        const Var x = t.leaf(x0);
        const Var lap = input_laplacian(
            t, [](Tape& tape, Var features) { return tape.square(tape.slice_cols(features, 0, 1)); },
            x, {0, 1, 2});
        for (int i = 0; i < 12; ++i) CHECK(t.value(lap)(i, 0) == 2.0);
    }

    SUBCASE("relu-affine model: identically zero off the kinks") {
        Tape t;
        Rng rng(37);
        const Mat x0 = random_mat(9, 3, rng);
        const Mat w0 = random_mat(3, 7, rng), w1 = random_mat(7, 1, rng);
        const Var x = t.leaf(x0);
        const Var lap = input_laplacian(
            t,
            [&](Tape& tape, Var features) {
                return tape.matmul(tape.relu(tape.matmul(features, tape.constant(w0))),
                                   tape.constant(w1));
            },
            x, {0, 1, 2});
        CHECK(t.value(lap).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("tanh network matches the finite-difference laplacian") {
        Rng rng(41);
        const int n = 10;
        const Mat x0 = random_mat(n, 3, rng);
        const Mat w0 = random_mat(3, 8, rng), b0 = random_mat(1, 8, rng), w1 = random_mat(8, 1, rng);
        const auto model = [&](Tape& tape, Var features) {
            return tape.matmul(
                tape.tanh(tape.add_rowvec(tape.matmul(features, tape.constant(w0)), tape.constant(b0))),
                tape.constant(w1));
        };
        Tape t;
        const Var x = t.leaf(x0);
        const Mat lap = t.value(input_laplacian(t, model, x, {0, 1, 2}));

        const auto eval = [&](const Mat& xm) {
            Tape tape;
            return tape.value(model(tape, tape.leaf(xm)));
        };
        const double h = 1e-4;
        Mat fd = Mat::Zero(n, 1);
        for (int c = 0; c < 3; ++c) {
            Mat xp = x0, xm = x0;
            xp.col(c).array() += h;
            xm.col(c).array() -= h;
            fd += (eval(xp) - 2.0 * eval(x0) + eval(xm)) / (h * h);
        }
        for (int i = 0; i < n; ++i)
            CHECK(std::abs(lap(i, 0) - fd(i, 0)) / std::max(1.0, std::abs(fd(i, 0))) < 1e-4);
    }

    SUBCASE("coordinate column out of range") {
        Tape t;
        const Var x = t.leaf(Mat::Zero(4, 3));
        CHECK_THROWS_AS(
            input_laplacian(t, [](Tape& tape, Var f) { return tape.slice_cols(f, 0, 1); }, x, {0, 1, 5}),
            GraphError);
    }
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
    Rng rng(43);
    const Mat x0 = random_mat(6, 1, rng);
    const double err = grad_check(
        [](Tape& t, Var x) { return t.mean_reduce(t.square(x)); }, x0, {1e-5, 0, 0});
    CHECK(err < 1e-9);
}

TEST_CASE("unreachable wrt leaves get zero gradients") {
    Tape t;
    const Var a = t.leaf(Mat::Ones(3, 1));
    const Var b = t.leaf(Mat::Ones(2, 2));
    const Var loss = t.mean_reduce(t.square(a));
    const auto grads = t.backward(loss, {a, b});
    CHECK(t.value(grads[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(t.rows(grads[1]) == 2);
    CHECK(t.cols(grads[1]) == 2);
}

TEST_CASE("backward input validation") {
    Tape t;
    const Var a = t.leaf(Mat::Ones(3, 2));
    CHECK_THROWS_AS(t.backward(a, {a}), GraphError);  // non-scalar loss
    CHECK_THROWS_AS(t.backward(Var{99}, {a}), GraphError);
    CHECK_THROWS_AS(t.backward(t.mean_reduce(a), {Var{-1}}), GraphError);
}

TEST_CASE("shape and segment validation") {
    Tape t;
    const Var a = t.leaf(Mat::Zero(2, 2));
    const Var b = t.leaf(Mat::Zero(3, 2));
    CHECK_THROWS_AS(t.add(a, b), GraphError);
    CHECK_THROWS_AS(t.mul(a, b), GraphError);
    CHECK_THROWS_AS(t.matmul(a, b), GraphError);
    CHECK_THROWS_AS(t.concat_cols(a, b), GraphError);
    CHECK_THROWS_AS(t.slice_cols(a, 1, 2), GraphError);
    CHECK_THROWS_AS(t.gather_rows(a, {0, 2}), GraphError);
    CHECK_THROWS_AS(t.add_rowvec(a, t.leaf(Mat::Zero(1, 3))), GraphError);
    // segment ids must be sorted and cover every segment
    CHECK_THROWS_AS(t.segment_max(b, {0, 0, 2}, 3), GraphError);   // empty segment 1
    CHECK_THROWS_AS(t.segment_max(b, {1, 0, 1}, 2), GraphError);   // unsorted
    CHECK_THROWS_AS(t.segment_max(b, {0, 0}, 2), GraphError);      // wrong length
    CHECK_THROWS_AS(t.segment_mean(b, {0, 1, 3}, 4), GraphError);  // empty segment 2
}

TEST_CASE("determinism: identical graphs give bit-identical values and gradients") {
    const auto run = [](std::vector<double>& loss_out) {
        Tape t;
        Rng rng(77);
        const Mat x0 = random_mat(6, 4, rng), w0 = random_mat(4, 5, rng), w1 = random_mat(5, 1, rng);
        const Var x = t.leaf(x0), w_a = t.leaf(w0), w_b = t.leaf(w1);
        const Var out = t.matmul(t.tanh(t.matmul(x, w_a)), w_b);
        const Var loss = t.mean_reduce(t.square(out));
        loss_out.push_back(t.value(loss)(0, 0));
        const auto grads = t.backward(loss, {w_a, w_b});
        for (const Var g : grads) {
            const Mat& m = t.value(g);
            for (int i = 0; i < m.size(); ++i) loss_out.push_back(m(i));
        }
    };
    std::vector<double> first, second;
    run(first);
    run(second);
    REQUIRE(first.size() == second.size());
    for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}
