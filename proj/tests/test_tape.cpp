#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/rng.hpp"
#include "rkdea/tape.hpp"

using rkdea::DenseMatrix;
using rkdea::NodeId;
using rkdea::Rng;
using rkdea::SparseMatrix;
using rkdea::Tape;

namespace {

DenseMatrix<double> random_dense(std::size_t r, std::size_t c, std::uint64_t seed,
                                 double shift = 0.0) {
    Rng rng(seed);
    DenseMatrix<double> m(r, c);
    for (auto& v : m.data()) v = rng.normal() + shift;
    return m;
}

// Replays `build` from scratch per evaluation and compares the tape's
// gradient for one leaf against entry-wise central differences.
template <typename Build>
void check_against_fd(const DenseMatrix<double>& x0, Build build, double tol = 1e-6) {
    Tape<double> tape;
    const NodeId leaf = tape.leaf(x0, true);
    const NodeId root = build(tape, leaf);
    tape.backward(root);
    const DenseMatrix<double> g = tape.grad(leaf);

    const auto eval = [&build](const DenseMatrix<double>& x) {
        Tape<double> t;
        const NodeId l = t.leaf(x, true);
        return t.value(build(t, l))(0, 0);
    };
    for (std::size_t i = 0; i < x0.rows(); ++i)
        for (std::size_t j = 0; j < x0.cols(); ++j) {
            const double fd = oracle::central_diff(eval, x0, i, j);
            REQUIRE(g(i, j) == Catch::Approx(fd).margin(tol).epsilon(tol));
        }
}

}  // namespace

TEST_CASE("primitive forward values on pinned inputs") {
    Tape<double> tape;
    DenseMatrix<double> x(1, 3);
    x(0, 0) = -1;
    x(0, 1) = 0;
    x(0, 2) = 2;
    const auto r = tape.value(tape.relu(tape.leaf(x, false)));
    REQUIRE(r(0, 0) == 0.0);
    REQUIRE(r(0, 1) == 0.0);
    REQUIRE(r(0, 2) == 2.0);

    const auto s = tape.value(tape.sigmoid(tape.leaf(DenseMatrix<double>(1, 1), false)));
    REQUIRE(s(0, 0) == 0.5);

    DenseMatrix<double> v(1, 2);
    v(0, 0) = 3;
    v(0, 1) = 4;
    const auto n = tape.value(tape.row_l2_norm(tape.leaf(v, false)));
    REQUIRE(n.rows() == 1);
    REQUIRE(n.cols() == 1);
    REQUIRE(n(0, 0) == 5.0);
}

TEST_CASE("elementwise and broadcast gradients match finite differences") {
    const auto x = random_dense(3, 4, 1);
    const auto y = random_dense(3, 4, 2);

    check_against_fd(x, [&y](Tape<double>& t, NodeId l) {
        return t.sum(t.mul(t.add(l, t.leaf(y, false)), t.sub(l, t.leaf(y, false))));
    });
    check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.mean(t.square(l)); });
    check_against_fd(x, [](Tape<double>& t, NodeId l) {
        return t.sum(t.one_minus(t.scale(t.add_scalar(l, 0.7), -1.3)));
    });

    const auto row = random_dense(1, 4, 3);
    check_against_fd(x, [&row](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.add_rowvec(l, t.leaf(row, false))));
    });
    check_against_fd(row, [&x](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.add_rowvec(t.leaf(x, false), l)));
    });
}

TEST_CASE("nonlinearity gradients match finite differences away from kinks") {
    const auto pos = random_dense(3, 3, 4, 3.0);   // comfortably positive
    const auto neg = random_dense(3, 3, 5, -3.0);  // comfortably negative
    for (const auto& x : {pos, neg}) {
        check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.sum(t.relu(l)); });
        check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.sum(t.hinge(l)); });
        check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.sum(t.abs_val(l)); });
        check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.mean(t.sigmoid(l)); });
    }
}

TEST_CASE("matrix product gradients match finite differences") {
    const auto a = random_dense(3, 4, 6);
    const auto b = random_dense(4, 2, 7);
    check_against_fd(a, [&b](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.matmul(l, t.leaf(b, false))));
    });
    check_against_fd(b, [&a](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.matmul(t.leaf(a, false), l)));
    });

    const auto s = SparseMatrix<double>::from_coo(
        3, 3, {{0, 0, 0.5}, {0, 2, 0.25}, {1, 1, -1.5}, {2, 0, 2.0}});
    const auto d = random_dense(3, 2, 8);
    check_against_fd(d, [&s](Tape<double>& t, NodeId l) { return t.sum(t.square(t.spmm(s, l))); });
}

TEST_CASE("row norm and row normalize gradients match finite differences") {
    const auto x = random_dense(4, 3, 9, 1.0);
    check_against_fd(x, [](Tape<double>& t, NodeId l) { return t.sum(t.row_l2_norm(l)); });
    check_against_fd(x, [](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.add_scalar(t.row_normalize(l), 0.3)));
    });
}

TEST_CASE("zero rows pass through norm and normalize without NaN") {
    DenseMatrix<double> x(2, 3);
    x(0, 0) = 3;
    x(0, 1) = 4;
    Tape<double> tape;
    const NodeId l = tape.leaf(x, true);
    const NodeId root = tape.sum(tape.add(tape.row_l2_norm(l), tape.row_l2_norm(tape.row_normalize(l))));
    REQUIRE(tape.value(root)(0, 0) == 6.0);  // 5 + 0 from norms, 1 + 0 normalized
    tape.backward(root);
    const auto& g = tape.grad(l);
    REQUIRE(g.all_finite());
    REQUIRE(g(1, 0) == 0.0);
    REQUIRE(g(1, 2) == 0.0);
}

TEST_CASE("gather rows accumulates gradient over repeated indices") {
    const auto x = random_dense(4, 2, 10);
    check_against_fd(x, [](Tape<double>& t, NodeId l) {
        return t.sum(t.square(t.gather_rows(l, {1, 1, 3, 0})));
    });
}

TEST_CASE("huber node gradient matches finite differences off the seam") {
    auto ref = DenseMatrix<double>::zeros(3, 1);
    DenseMatrix<double> x(3, 1);
    x(0, 0) = 0.4;   // quadratic branch
    x(1, 0) = 2.5;   // linear branch
    x(2, 0) = -1.8;  // linear branch, negative side
    check_against_fd(x, [&ref](Tape<double>& t, NodeId l) {
        return t.mean(t.huber_vs_const(l, ref));
    });
}

TEST_CASE("fused pairwise distance equals the composed route in value and gradient") {
    const auto x = random_dense(5, 3, 11);
    const std::vector<std::size_t> ia{0, 2, 4};
    const std::vector<std::size_t> ib{1, 3, 0};

    Tape<double> fused_tape;
    const NodeId fl = fused_tape.leaf(x, true);
    const NodeId fused = fused_tape.pairwise_distance(fl, ia, ib);
    const NodeId froot = fused_tape.sum(fused_tape.square(fused));
    fused_tape.backward(froot);

    Tape<double> composed_tape;
    const NodeId cl = composed_tape.leaf(x, true);
    const NodeId diff = composed_tape.sub(composed_tape.gather_rows(cl, ia),
                                          composed_tape.gather_rows(cl, ib));
    const NodeId composed = composed_tape.row_l2_norm(diff);
    const NodeId croot = composed_tape.sum(composed_tape.square(composed));
    composed_tape.backward(croot);

    REQUIRE(fused_tape.value(fused) == composed_tape.value(composed));
    const auto& fg = fused_tape.grad(fl);
    const auto& cg = composed_tape.grad(cl);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j)
            REQUIRE(fg(i, j) == Catch::Approx(cg(i, j)).margin(1e-14));
}

TEST_CASE("fused translation distance equals the composed route") {
    const auto emb = random_dense(5, 3, 12);
    const auto rel = random_dense(2, 3, 13);
    const std::vector<std::size_t> h{0, 3}, r{1, 0}, t{2, 4};

    Tape<double> ft;
    const NodeId fe = ft.leaf(emb, true);
    const NodeId fr = ft.leaf(rel, true);
    const NodeId fused = ft.translation_distance(fe, fr, h, r, t);
    ft.backward(ft.sum(ft.square(fused)));

    Tape<double> ct;
    const NodeId ce = ct.leaf(emb, true);
    const NodeId cr = ct.leaf(rel, true);
    const NodeId resid = ct.sub(ct.add(ct.gather_rows(ce, h), ct.gather_rows(cr, r)),
                                ct.gather_rows(ce, t));
    const NodeId composed = ct.row_l2_norm(resid);
    ct.backward(ct.sum(ct.square(composed)));

    REQUIRE(ft.value(fused) == ct.value(composed));
    const auto& feg = ft.grad(fe);
    const auto& ceg = ct.grad(ce);
    for (std::size_t i = 0; i < emb.rows(); ++i)
        for (std::size_t j = 0; j < emb.cols(); ++j)
            REQUIRE(feg(i, j) == Catch::Approx(ceg(i, j)).margin(1e-14));
    const auto& frg = ft.grad(fr);
    const auto& crg = ct.grad(cr);
    for (std::size_t i = 0; i < rel.rows(); ++i)
        for (std::size_t j = 0; j < rel.cols(); ++j)
            REQUIRE(frg(i, j) == Catch::Approx(crg(i, j)).margin(1e-14));
}

TEST_CASE("translation distance gradients match finite differences") {
    const auto emb = random_dense(4, 3, 14);
    const auto rel = random_dense(2, 3, 15);
    const std::vector<std::size_t> h{0, 1}, r{0, 1}, t{2, 3};
    check_against_fd(emb, [&](Tape<double>& tp, NodeId l) {
        return tp.sum(tp.translation_distance(l, tp.leaf(rel, false), h, r, t));
    });
    check_against_fd(rel, [&](Tape<double>& tp, NodeId l) {
        return tp.sum(tp.translation_distance(tp.leaf(emb, false), l, h, r, t));
    });
}

TEST_CASE("backward runs once and requires a scalar root") {
    Tape<double> tape;
    const NodeId l = tape.leaf(random_dense(2, 2, 16), true);
    REQUIRE_THROWS_AS(tape.backward(tape.square(l)), rkdea::ShapeError);

    Tape<double> tape2;
    const NodeId l2 = tape2.leaf(random_dense(2, 2, 17), true);
    const NodeId root = tape2.sum(l2);
    tape2.backward(root);
    REQUIRE_THROWS_AS(tape2.backward(root), rkdea::Error);
}

TEST_CASE("gradient flows only to nodes reachable from the root") {
    Tape<double> tape;
    const NodeId used = tape.leaf(random_dense(2, 2, 18), true);
    const NodeId unused = tape.leaf(random_dense(2, 2, 19), true);
    const NodeId dead_end = tape.square(unused);  // never feeds the root
    tape.backward(tape.sum(tape.square(used)));
    REQUIRE(tape.grad(unused) == DenseMatrix<double>::zeros(2, 2));
    REQUIRE(tape.value(dead_end).all_finite());
}

TEST_CASE("requires_grad false keeps a leaf out of the backward sweep") {
    const auto x = random_dense(2, 2, 20);
    Tape<double> tape;
    const NodeId frozen = tape.leaf(x, false);
    const NodeId live = tape.leaf(x, true);
    tape.backward(tape.sum(tape.mul(frozen, live)));
    REQUIRE(tape.grad(frozen) == DenseMatrix<double>::zeros(2, 2));
    REQUIRE(tape.grad(live) == x);
}

TEST_CASE("kink distances are tracked across rectifiers") {
    Tape<double> tape;
    DenseMatrix<double> x(1, 3);
    x(0, 0) = -2.0;
    x(0, 1) = 0.3;
    x(0, 2) = 5.0;
    tape.relu(tape.leaf(x, false));
    REQUIRE(tape.min_kink_gap() == Catch::Approx(0.3));
}

TEST_CASE("non-finite intermediate values raise a numeric error") {
    Tape<double> tape;
    const NodeId big = tape.leaf(DenseMatrix<double>::constant(1, 1, 1e200), true);
    REQUIRE_THROWS_AS(tape.square(big), rkdea::NumericError);
}

TEST_CASE("finite checks can be disabled for overflow-tolerant probing") {
    Tape<double> tape(1, false);
    const NodeId big = tape.leaf(DenseMatrix<double>::constant(1, 1, 1e200), true);
    const NodeId sq = tape.square(big);
    REQUIRE(std::isinf(tape.value(sq)(0, 0)));
}
