#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "rkdea/errors.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/sampling.hpp"
#include "rkdea/tape.hpp"

namespace rkdea {

// Every margin and distillation loss below is a mean over its instances, not
// a sum. The adaptive temperature multiplies raw loss magnitudes, so the
// magnitudes must not scale with dataset size.

struct LossReport {
    double l_ke = 0.0;
    double l_nc = 0.0;
    double l_kd = 0.0;
    double beta = 0.0;
    double total = 0.0;
    std::size_t step = 0;
};

enum class TempMode { Adaptive, Fixed };

namespace detail {

template <typename Item>
void require_aligned_negatives(const char* op, std::size_t n_positives,
                               const NegativeCache<Item>& negatives) {
    if (negatives.items.size() != n_positives)
        throw ShapeError(std::string(op) + ": negative cache covers " +
                         std::to_string(negatives.items.size()) + " positives, expected " +
                         std::to_string(n_positives));
    for (const auto& list : negatives.items)
        if (list.empty())
            throw InputError(std::string(op) + ": every positive needs at least one negative");
}

}  // namespace detail

// Margin ranking over translation residuals: mean over every (positive,
// negative) pair of [ ||e_h + r - e_t|| - ||e_h' + r' - e_t'|| + gamma1 ]_+.
// Triples are in global ids against emb and rel rows.
template <typename T>
NodeId transe_loss(Tape<T>& tape, NodeId emb, NodeId rel, const std::vector<Triple>& positives,
                   const NegativeCache<Triple>& negatives, T gamma1) {
    if (!(gamma1 > T{0})) throw InputError("transe_loss: gamma1 must be positive");
    if (positives.empty()) throw InputError("transe_loss: empty positives");
    detail::require_aligned_negatives("transe_loss", positives.size(), negatives);

    std::vector<std::size_t> ph, pr, pt, nh, nr, nt;
    for (std::size_t i = 0; i < positives.size(); ++i) {
        for (const Triple& neg : negatives.items[i]) {
            ph.push_back(positives[i].head);
            pr.push_back(positives[i].relation);
            pt.push_back(positives[i].tail);
            nh.push_back(neg.head);
            nr.push_back(neg.relation);
            nt.push_back(neg.tail);
        }
    }
    const NodeId pos_d = tape.translation_distance(emb, rel, ph, pr, pt);
    const NodeId neg_d = tape.translation_distance(emb, rel, nh, nr, nt);
    return tape.mean(tape.hinge(tape.add_scalar(tape.sub(pos_d, neg_d), gamma1)));
}

// Margin ranking over alignment distances: mean over every (positive,
// negative) pair of [ d(e1,e2) - d(e1',e2') + gamma2 ]_+, d the L2 distance
// between the joint-embedding rows of the two entities.
template <typename T>
NodeId nc_loss(Tape<T>& tape, NodeId emb, const AlignmentSeeds& positives,
               const NegativeCache<std::pair<EntityId, EntityId>>& negatives,
               const GlobalIndex& gi, T gamma2) {
    if (!(gamma2 > T{0})) throw InputError("nc_loss: gamma2 must be positive");
    if (positives.empty()) throw InputError("nc_loss: empty positives");
    detail::require_aligned_negatives("nc_loss", positives.size(), negatives);

    std::vector<std::size_t> pa, pb, na, nb;
    for (std::size_t i = 0; i < positives.size(); ++i) {
        const auto& [e1, e2] = positives.pairs[i];
        for (const auto& [x1, x2] : negatives.items[i]) {
            pa.push_back(gi.entity1(e1));
            pb.push_back(gi.entity2(e2));
            na.push_back(gi.entity1(x1));
            nb.push_back(gi.entity2(x2));
        }
    }
    const NodeId pos_d = tape.pairwise_distance(emb, pa, pb);
    const NodeId neg_d = tape.pairwise_distance(emb, na, nb);
    return tape.mean(tape.hinge(tape.add_scalar(tape.sub(pos_d, neg_d), gamma2)));
}

// Mean head-tail distance over the triple set, the per-model normalizer that
// makes teacher and student distances comparable. Gradient-free by contract.
template <typename T>
double compute_mu(const DenseMatrix<T>& emb, const std::vector<Triple>& triples) {
    if (triples.empty()) throw InputError("compute_mu: empty triple set");
    double sum = 0;
    for (const Triple& t : triples) {
        const T* h = emb.row(t.head);
        const T* e = emb.row(t.tail);
        double s = 0;
        for (std::size_t j = 0; j < emb.cols(); ++j) {
            const double d = static_cast<double>(h[j]) - static_cast<double>(e[j]);
            s += d * d;
        }
        sum += std::sqrt(s);
    }
    const double mu = sum / static_cast<double>(triples.size());
    if (!(mu >= 1e-12))
        throw DegenerateEmbeddingError("compute_mu: embeddings collapsed, mu < 1e-12");
    return mu;
}

// Normalized head-tail energy of one triple.
template <typename T>
double energy_psi(const DenseMatrix<T>& emb, std::size_t head, std::size_t tail, double mu) {
    if (!(mu > 0)) throw InputError("energy_psi: mu must be positive");
    const T* h = emb.row(head);
    const T* t = emb.row(tail);
    double s = 0;
    for (std::size_t j = 0; j < emb.cols(); ++j) {
        const double d = static_cast<double>(h[j]) - static_cast<double>(t[j]);
        s += d * d;
    }
    return std::sqrt(s) / mu;
}

// Column of psi values for a triple set, used as the frozen teacher side of
// the distillation loss.
template <typename T, typename S>
DenseMatrix<S> psi_column(const DenseMatrix<T>& emb, const std::vector<Triple>& triples,
                          double mu) {
    if (!(mu > 0)) throw InputError("psi_column: mu must be positive");
    DenseMatrix<S> out(triples.size(), 1);
    for (std::size_t i = 0; i < triples.size(); ++i)
        out(i, 0) = static_cast<S>(energy_psi(emb, triples[i].head, triples[i].tail, mu));
    return out;
}

// Huber with unit band: quadratic within |x-y| <= 1, linear outside, C1 at
// the boundary.
inline double huber(double x, double y) {
    const double u = std::abs(x - y);
    return u <= 1.0 ? 0.5 * u * u : u - 0.5;
}

// Distillation term: mean Huber gap between the frozen teacher psi column and
// the student's psi over the same triples. Gradients reach only the student.
template <typename T>
NodeId kd_loss(Tape<T>& tape, const DenseMatrix<T>& teacher_psi, NodeId student_emb,
               const std::vector<Triple>& triples, double mu_s) {
    if (triples.empty()) throw InputError("kd_loss: empty triple set");
    if (!(mu_s > 0)) throw InputError("kd_loss: mu must be positive");
    if (teacher_psi.rows() != triples.size() || teacher_psi.cols() != 1)
        throw ShapeError("kd_loss: teacher psi column does not match the triple set");
    std::vector<std::size_t> h, t;
    h.reserve(triples.size());
    t.reserve(triples.size());
    for (const Triple& tr : triples) {
        h.push_back(tr.head);
        t.push_back(tr.tail);
    }
    const NodeId psi_s =
        tape.scale(tape.pairwise_distance(student_emb, std::move(h), std::move(t)),
                   static_cast<T>(1.0 / mu_s));
    return tape.mean(tape.huber_vs_const(psi_s, teacher_psi));
}

template <typename T>
NodeId kd_loss(Tape<T>& tape, const DenseMatrix<T>& teacher_emb, NodeId student_emb,
               const std::vector<Triple>& triples, double mu_t, double mu_s) {
    return kd_loss(tape, psi_column<T, T>(teacher_emb, triples, mu_t), student_emb, triples,
                   mu_s);
}

// Plain-value twin of kd_loss, for oracles and frozen-model comparisons.
template <typename T>
double kd_loss_value(const DenseMatrix<T>& teacher_emb, const DenseMatrix<T>& student_emb,
                     const std::vector<Triple>& triples, double mu_t, double mu_s) {
    if (triples.empty()) throw InputError("kd_loss: empty triple set");
    double sum = 0;
    for (const Triple& t : triples)
        sum += huber(energy_psi(teacher_emb, t.head, t.tail, mu_t),
                     energy_psi(student_emb, t.head, t.tail, mu_s));
    return sum / static_cast<double>(triples.size());
}

// Adaptive temperature: the product of the two detached loss magnitudes,
// clamped into (0, 1) because the raw product is unbounded early in training.
inline double temperature_beta(double l_nc, double l_kd) {
    if (!std::isfinite(l_nc) || !std::isfinite(l_kd))
        throw NumericError("temperature_beta: non-finite loss magnitude");
    if (l_nc < 0 || l_kd < 0)
        throw InputError("temperature_beta: loss magnitudes must be non-negative");
    return std::clamp(l_nc * l_kd, 1e-3, 1.0 - 1e-3);
}

struct StudentLoss {
    NodeId total;
    LossReport report;
};

// Blends the two student terms as (1-beta) L_NC + beta L_KD with beta held
// constant for the gradient: beta multiplies the terms as a plain scalar and
// never appears as a tape node. Without a KD term the objective is L_NC alone
// and beta reports 0.
template <typename T>
StudentLoss student_total_loss(Tape<T>& tape, NodeId l_nc_node, std::optional<NodeId> l_kd_node,
                               TempMode mode, double fixed_beta, std::size_t step) {
    StudentLoss out;
    out.report.step = step;
    out.report.l_nc = static_cast<double>(tape.value(l_nc_node)(0, 0));
    if (!l_kd_node) {
        out.total = l_nc_node;
        out.report.total = out.report.l_nc;
        return out;
    }
    out.report.l_kd = static_cast<double>(tape.value(*l_kd_node)(0, 0));
    if (mode == TempMode::Fixed) {
        if (!(fixed_beta > 0.0 && fixed_beta < 1.0))
            throw ConfigError("student_total_loss: fixed beta must lie in (0, 1)");
        out.report.beta = fixed_beta;
    } else {
        out.report.beta = temperature_beta(out.report.l_nc, out.report.l_kd);
    }
    const double beta = out.report.beta;
    out.total = tape.add(tape.scale(l_nc_node, static_cast<T>(1.0 - beta)),
                         tape.scale(*l_kd_node, static_cast<T>(beta)));
    out.report.total = static_cast<double>(tape.value(out.total)(0, 0));
    return out;
}

}  // namespace rkdea
