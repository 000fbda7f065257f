#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/matrix.hpp"

namespace rkdea {

enum class Direction { Kg1ToKg2, Kg2ToKg1 };

inline const char* direction_name(Direction d) {
    return d == Direction::Kg1ToKg2 ? "kg1->kg2" : "kg2->kg1";
}

namespace detail {

template <typename T>
double sq_distance(const DenseMatrix<T>& emb, std::size_t a, std::size_t b) {
    const T* pa = emb.row(a);
    const T* pb = emb.row(b);
    double s = 0;
    for (std::size_t j = 0; j < emb.cols(); ++j) {
        const double d = static_cast<double>(pa[j]) - static_cast<double>(pb[j]);
        s += d * d;
    }
    return s;
}

}  // namespace detail

// 1-based rank of each test pair's true counterpart among the candidates,
// ordered by (L2 distance, entity id). The default candidate pool is the
// test counterparts themselves (the closed test-set protocol); widen_pool
// ranks against every entity of the counterpart KG instead.
template <typename T>
std::vector<std::size_t> rank_alignments(const DenseMatrix<T>& emb,
                                         const AlignmentSeeds& test_seeds, const GlobalIndex& gi,
                                         Direction direction, bool widen_pool = false) {
    if (test_seeds.empty()) throw InputError("rank_alignments: empty test set");
    if (emb.rows() != gi.total_entities())
        throw ShapeError("rank_alignments: embedding rows != total entities");
    const bool fwd = direction == Direction::Kg1ToKg2;

    // Candidates as (global row, local id).
    std::vector<std::pair<std::size_t, EntityId>> pool;
    if (widen_pool) {
        const std::size_t n = fwd ? gi.n2_entities : gi.n1_entities;
        pool.reserve(n);
        for (std::size_t e = 0; e < n; ++e) {
            const auto id = static_cast<EntityId>(e);
            pool.push_back({fwd ? gi.entity2(id) : gi.entity1(id), id});
        }
    } else {
        pool.reserve(test_seeds.size());
        for (const auto& [e1, e2] : test_seeds.pairs)
            pool.push_back(fwd ? std::pair{gi.entity2(e2), e2} : std::pair{gi.entity1(e1), e1});
    }

    std::vector<std::size_t> ranks;
    ranks.reserve(test_seeds.size());
    for (const auto& [e1, e2] : test_seeds.pairs) {
        const std::size_t query = fwd ? gi.entity1(e1) : gi.entity2(e2);
        const EntityId truth = fwd ? e2 : e1;
        const double d_true =
            detail::sq_distance(emb, query, fwd ? gi.entity2(truth) : gi.entity1(truth));
        std::size_t rank = 1;
        for (const auto& [row, id] : pool) {
            const double d = detail::sq_distance(emb, query, row);
            if (d < d_true || (d == d_true && id < truth)) ++rank;
        }
        ranks.push_back(rank);
    }
    return ranks;
}

inline double hits_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw InputError("hits_at_k: empty rank list");
    if (k < 1) throw InputError("hits_at_k: k must be >= 1");
    std::size_t hit = 0;
    for (std::size_t r : ranks)
        if (r <= k) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

inline double mrr(const std::vector<std::size_t>& ranks) {
    if (ranks.empty()) throw InputError("mrr: empty rank list");
    double sum = 0;
    for (std::size_t r : ranks) sum += 1.0 / static_cast<double>(r);
    return sum / static_cast<double>(ranks.size());
}

struct RankingMetrics {
    Direction direction = Direction::Kg1ToKg2;
    std::map<std::size_t, double> hits;
    double mrr = 0.0;
    std::size_t num_queries = 0;
};

inline RankingMetrics compute_metrics(const std::vector<std::size_t>& ranks,
                                      const std::vector<std::size_t>& ks, Direction direction) {
    RankingMetrics m;
    m.direction = direction;
    m.num_queries = ranks.size();
    for (std::size_t k : ks) m.hits[k] = hits_at_k(ranks, k);
    m.mrr = mrr(ranks);
    return m;
}

inline nlohmann::json metrics_json(const RankingMetrics& m) {
    nlohmann::json j;
    j["direction"] = direction_name(m.direction);
    for (const auto& [k, v] : m.hits) j["hits@" + std::to_string(k)] = v;
    j["mrr"] = m.mrr;
    j["n"] = m.num_queries;
    return j;
}

}  // namespace rkdea
