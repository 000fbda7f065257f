#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rkdea/encoder.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/eval.hpp"
#include "rkdea/gradcheck.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/objectives.hpp"
#include "rkdea/rng.hpp"
#include "rkdea/sampling.hpp"
#include "rkdea/tape.hpp"

namespace rkdea {

struct SelfCheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline void expect(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

inline std::string fmt_sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

inline std::string fmt_report(const GradCheckReport& r) {
    std::ostringstream os;
    os << "max rel err " << fmt_sci(r.max_rel_error) << " over " << r.checked << " entries ("
       << r.skipped << " near kinks skipped)";
    return os.str();
}

// Shared toy problem: two 3-entity graphs with 2 relations each and a full
// alignment, small enough that every gradcheck runs in milliseconds.
inline DatasetBundle selfcheck_bundle() {
    KnowledgeGraph kg1{3, 2, {{0, 0, 1}, {1, 1, 2}, {0, 1, 2}}, {}};
    KnowledgeGraph kg2{3, 2, {{0, 0, 1}, {1, 1, 2}, {2, 0, 0}}, {}};
    AlignmentSeeds train{{{0, 0}, {1, 1}}};
    AlignmentSeeds test{{{2, 2}}};
    return DatasetBundle{kg1, kg2, train, test, std::nullopt};
}

inline DenseMatrix<double> random_embedding(std::size_t rows, std::size_t cols,
                                            std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    DenseMatrix<double> m(rows, cols);
    for (auto& v : m.data()) v = scale * rng.normal();
    return m;
}

inline std::string check_quadratic_gradient() {
    std::vector<DenseMatrix<double>> params{random_embedding(3, 4, 11)};
    auto build = [](Tape<double>& tape, const std::vector<NodeId>& leaves) {
        return tape.sum(tape.square(leaves[0]));
    };
    const GradCheckReport r = check_gradient(build, params);
    expect(r.max_rel_error < 1e-6, "quadratic gradient error " + fmt_sci(r.max_rel_error));
    return fmt_report(r);
}

inline std::string check_primitive_gradients() {
    // One expression through the smooth primitives: matmul, bias broadcast,
    // sigmoid, elementwise product, complement, row norm, square, mean.
    const DenseMatrix<double> x0 = random_embedding(4, 3, 21);
    std::vector<DenseMatrix<double>> params{random_embedding(3, 3, 22, 0.5),
                                            random_embedding(1, 3, 23, 0.1)};
    auto build = [&x0](Tape<double>& tape, const std::vector<NodeId>& leaves) {
        const NodeId x = tape.leaf(x0, false);
        const NodeId h = tape.sigmoid(tape.add_rowvec(tape.matmul(x, leaves[0]), leaves[1]));
        const NodeId g = tape.mul(h, tape.one_minus(h));
        return tape.mean(tape.square(tape.row_l2_norm(g)));
    };
    const GradCheckReport r = check_gradient(build, params);
    expect(r.max_rel_error < 1e-6, "primitive gradient error " + fmt_sci(r.max_rel_error));
    return fmt_report(r);
}

inline std::string check_spmm_oracle() {
    Rng rng(31);
    std::vector<SparseMatrix<double>::Entry> entries;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            if (rng.uniform() < 0.4) entries.push_back({i, j, rng.normal()});
    const SparseMatrix<double> s = SparseMatrix<double>::from_coo(6, 6, entries);
    const DenseMatrix<double> d = random_embedding(6, 5, 32);
    DenseMatrix<double> fast(6, 5);
    s.multiply_into(d, fast, false, 1);
    const DenseMatrix<double> dense = s.to_dense();
    double worst = 0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 6; ++k) acc += dense(i, k) * d(k, j);
            worst = std::max(worst, std::abs(acc - fast(i, j)));
        }
    expect(worst < 1e-12, "sparse multiply deviates from dense loop by " + fmt_sci(worst));
    return "max abs deviation " + fmt_sci(worst);
}

inline std::string check_huber_contract() {
    expect(huber(0.5, 0.0) == 0.125, "huber(0.5, 0) != 0.125");
    expect(huber(2.0, 0.0) == 1.5, "huber(2, 0) != 1.5");
    expect(huber(1.0, 0.0) == 0.5, "huber(1, 0) != 0.5");
    expect(huber(-2.0, 0.0) == 1.5, "huber(-2, 0) != 1.5");
    return "quadratic core, linear tails, continuous seam at |u| = 1";
}

inline std::string check_mu_psi_identity() {
    const DatasetBundle bundle = selfcheck_bundle();
    const GlobalIndex gi(bundle);
    const std::vector<Triple> triples = global_triples(bundle);
    const DenseMatrix<double> emb = random_embedding(gi.total_entities(), 7, 41);
    const double mu = compute_mu(emb, triples);
    const DenseMatrix<double> psi = psi_column<double, double>(emb, triples, mu);
    double mean = 0;
    for (std::size_t i = 0; i < psi.rows(); ++i) mean += psi(i, 0);
    mean /= static_cast<double>(psi.rows());
    expect(std::abs(mean - 1.0) < 1e-9, "mean psi is " + fmt_sci(mean) + ", expected 1");
    return "mean psi deviates from 1 by " + fmt_sci(std::abs(mean - 1.0));
}

inline std::string check_highway_carry_limit() {
    const DatasetBundle bundle = selfcheck_bundle();
    const GlobalIndex gi(bundle);
    Rng rng(51);
    EncoderParams<double> params =
        init_encoder_params<double>(gi.total_entities(), 5, 2, rng, std::nullopt, false);
    for (auto& layer : params.layers)
        for (auto& v : layer.b_T.data()) v = -50.0;
    const SparseMatrix<double> a = build_joint_adjacency<double>(bundle.kg1, bundle.kg2);
    const DenseMatrix<double> out = encode_values(params, a, 1);
    double worst = 0;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j)
            worst = std::max(worst, std::abs(out(i, j) - params.X(i, j)));
    expect(worst < 1e-6, "saturated gates leak " + fmt_sci(worst) + " of the GCN path");
    return "max |encode(X) - X| = " + fmt_sci(worst) + " with gate biases at -50";
}

inline std::string check_teacher_loss_gradient() {
    const DatasetBundle bundle = selfcheck_bundle();
    const GlobalIndex gi(bundle);
    const std::vector<Triple> triples = global_triples(bundle);
    const DenseMatrix<double> emb0 = random_embedding(gi.total_entities(), 4, 61);
    const NegativeCache<Triple> cache = sample_triple_negatives(emb0, triples, gi, 2, 62, false);
    std::vector<DenseMatrix<double>> params{emb0, random_embedding(gi.total_relations(), 4, 63)};
    auto build = [&](Tape<double>& tape, const std::vector<NodeId>& leaves) {
        return transe_loss(tape, leaves[0], leaves[1], triples, cache, 3.0);
    };
    const GradCheckReport r = check_gradient(build, params, 1e-6);
    expect(r.max_rel_error < 1e-5, "translation loss gradient error " + fmt_sci(r.max_rel_error));
    return fmt_report(r);
}

inline std::string check_student_loss_gradient() {
    const DatasetBundle bundle = selfcheck_bundle();
    const GlobalIndex gi(bundle);
    const std::vector<Triple> triples = global_triples(bundle);
    const DenseMatrix<double> emb0 = random_embedding(gi.total_entities(), 4, 71);
    const auto cache = mine_alignment_negatives(emb0, bundle.train_seeds, gi, 2);
    const DenseMatrix<double> teacher_emb = random_embedding(gi.total_entities(), 4, 72);
    const DenseMatrix<double> teacher_psi =
        psi_column<double, double>(teacher_emb, triples, compute_mu(teacher_emb, triples));
    // The student normalizer is held at its value for the current step, the
    // same stop-gradient the training loop applies.
    const double mu_s = compute_mu(emb0, triples);
    std::vector<DenseMatrix<double>> params{emb0};
    auto build = [&](Tape<double>& tape, const std::vector<NodeId>& leaves) {
        const NodeId l_nc = nc_loss(tape, leaves[0], bundle.train_seeds, cache, gi, 1.0);
        const NodeId l_kd = kd_loss(tape, teacher_psi, leaves[0], triples, mu_s);
        const StudentLoss total = student_total_loss(tape, l_nc, l_kd, TempMode::Fixed, 0.5, 1);
        return total.total;
    };
    const GradCheckReport r = check_gradient(build, params, 1e-6);
    expect(r.max_rel_error < 1e-5, "student loss gradient error " + fmt_sci(r.max_rel_error));
    return fmt_report(r);
}

inline std::string check_beta_clamp() {
    expect(std::abs(temperature_beta(0.5, 0.4) - 0.2) < 1e-15, "beta(0.5, 0.4) != 0.2");
    expect(temperature_beta(2.0, 1.0) == 0.999, "beta(2, 1) did not clamp to 0.999");
    expect(temperature_beta(0.0, 5.0) == 0.001, "beta(0, 5) did not clamp to 0.001");
    return "product rule inside [0.001, 0.999], clamped outside";
}

inline std::string check_adjacency_symmetry() {
    SyntheticSpec spec;
    spec.n_entities = 20;
    spec.n_relations = 3;
    spec.n_triples = 40;
    spec.rng_seed = 81;
    const DatasetBundle bundle = generate_synthetic(spec);
    const SparseMatrix<double> a = build_joint_adjacency<double>(bundle.kg1, bundle.kg2);
    const DenseMatrix<double> dense = a.to_dense();
    double asym = 0;
    for (std::size_t i = 0; i < dense.rows(); ++i)
        for (std::size_t j = i + 1; j < dense.cols(); ++j)
            asym = std::max(asym, std::abs(dense(i, j) - dense(j, i)));
    expect(asym <= 1e-12, "adjacency asymmetry " + fmt_sci(asym));

    // Power iteration on the dense copy; the dominant eigenvalue of the
    // normalized operator must not exceed 1.
    std::vector<double> v(dense.rows(), 1.0 / std::sqrt(static_cast<double>(dense.rows())));
    double lambda = 0;
    for (int it = 0; it < 300; ++it) {
        std::vector<double> y(dense.rows(), 0.0);
        for (std::size_t i = 0; i < dense.rows(); ++i)
            for (std::size_t j = 0; j < dense.cols(); ++j) y[i] += dense(i, j) * v[j];
        double norm = 0;
        for (double yi : y) norm += yi * yi;
        norm = std::sqrt(norm);
        expect(norm > 0, "power iteration collapsed to zero");
        lambda = norm;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = y[i] / norm;
    }
    expect(lambda <= 1.0 + 1e-9, "spectral radius " + fmt_sci(lambda) + " exceeds 1");
    return "symmetric within " + fmt_sci(asym) + ", spectral radius " + fmt_sci(lambda);
}

inline std::string check_metric_sanity() {
    const DatasetBundle bundle = selfcheck_bundle();
    const GlobalIndex gi(bundle);
    // Counterpart rows are exact copies, so every query ranks its own
    // counterpart first and both directions give perfect metrics.
    DenseMatrix<double> emb(gi.total_entities(), 2);
    for (std::size_t i = 0; i < 3; ++i) {
        emb(gi.entity1(static_cast<EntityId>(i)), 0) = static_cast<double>(i + 1);
        emb(gi.entity2(static_cast<EntityId>(i)), 0) = static_cast<double>(i + 1);
    }
    AlignmentSeeds all{{{0, 0}, {1, 1}, {2, 2}}};
    for (Direction dir : {Direction::Kg1ToKg2, Direction::Kg2ToKg1}) {
        const auto ranks = rank_alignments(emb, all, gi, dir);
        expect(hits_at_k(ranks, 1) == 1.0, "identical counterparts missed at rank 1");
        expect(hits_at_k(ranks, 1) <= hits_at_k(ranks, 10), "hits@k decreased in k");
        expect(mrr(ranks) == 1.0, "mrr of perfect ranking is not 1");
    }
    return "perfect fixture scores hits@1 = mrr = 1 in both directions";
}

}  // namespace detail

// Runs the named internal consistency checks. `only` keeps checks whose name
// contains the substring; `inject_bug` appends a check that always fails so
// harness wiring can be exercised end to end.
inline std::vector<SelfCheckResult> run_selfchecks(const std::string& only = "",
                                                   bool inject_bug = false) {
    std::vector<std::pair<std::string, std::function<std::string()>>> checks = {
        {"quadratic-gradient", detail::check_quadratic_gradient},
        {"primitive-gradients", detail::check_primitive_gradients},
        {"spmm-oracle", detail::check_spmm_oracle},
        {"huber-contract", detail::check_huber_contract},
        {"mu-psi-identity", detail::check_mu_psi_identity},
        {"highway-carry-limit", detail::check_highway_carry_limit},
        {"teacher-loss-gradient", detail::check_teacher_loss_gradient},
        {"student-loss-gradient", detail::check_student_loss_gradient},
        {"beta-clamp", detail::check_beta_clamp},
        {"adjacency-symmetry", detail::check_adjacency_symmetry},
        {"metric-sanity", detail::check_metric_sanity},
    };
    if (inject_bug)
        checks.push_back({"negative-control", []() -> std::string {
                              throw Error("intentional failure used to validate the harness");
                          }});

    std::vector<SelfCheckResult> results;
    for (auto& [name, fn] : checks) {
        if (!only.empty() && name.find(only) == std::string::npos) continue;
        SelfCheckResult r;
        r.name = name;
        try {
            r.detail = fn();
            r.passed = true;
        } catch (const std::exception& e) {
            r.detail = e.what();
            r.passed = false;
        }
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace rkdea
