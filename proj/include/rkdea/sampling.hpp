#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "rkdea/errors.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/rng.hpp"

namespace rkdea {

// One negative list per positive, in positive order. Item is Triple for the
// teacher cache and an entity pair for the student cache.
template <typename Item>
struct NegativeCache {
    std::vector<std::vector<Item>> items;
    std::size_t epoch_of_last_refresh = 0;
};

inline bool refresh_due(std::size_t epoch, std::size_t interval) {
    if (interval < 1) throw InputError("refresh_due: interval must be >= 1");
    return epoch % interval == 0;
}

namespace detail {

// Global row ids in [lo, hi) sorted by (squared L2 distance to the ref row,
// id), the ref row itself excluded. Squared distance orders identically to
// the distance and keeps exact ties exact.
template <typename T>
std::vector<std::size_t> neighbors_by_distance(const DenseMatrix<T>& emb, std::size_t ref,
                                               std::size_t lo, std::size_t hi) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(hi - lo);
    const T* pr = emb.row(ref);
    for (std::size_t i = lo; i < hi; ++i) {
        if (i == ref) continue;
        const T* pi = emb.row(i);
        double s = 0;
        for (std::size_t j = 0; j < emb.cols(); ++j) {
            const double d = static_cast<double>(pr[j]) - static_cast<double>(pi[j]);
            s += d * d;
        }
        scored.push_back({s, i});
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> out;
    out.reserve(scored.size());
    for (const auto& [d, i] : scored) out.push_back(i);
    return out;
}

}  // namespace detail

// Corrupts each triple into min(k1, same-KG alternatives) negatives: per copy
// a uniformly chosen endpoint is replaced, normally by the copy's rank among
// the endpoint's nearest same-KG entities (semantically similar corruption).
// A corruption that lands on a true triple walks outward to the next-nearest
// candidate, switching endpoints if one side runs out. uniform_fallback draws
// the replacement uniformly instead, for the epoch before any training has
// shaped the embedding space.
template <typename T>
NegativeCache<Triple> sample_triple_negatives(const DenseMatrix<T>& emb,
                                              const std::vector<Triple>& triples,
                                              const GlobalIndex& gi, std::size_t k1,
                                              std::uint64_t rng_seed,
                                              bool uniform_fallback = false) {
    if (k1 < 1) throw InputError("sample_triple_negatives: k1 must be >= 1");
    if (emb.rows() != gi.total_entities())
        throw ShapeError("sample_triple_negatives: embedding rows != total entities");
    const std::size_t n1 = gi.n1_entities;
    std::set<Triple> truth(triples.begin(), triples.end());
    std::map<std::size_t, std::vector<std::size_t>> neighbor_cache;
    auto neighbors = [&](std::size_t ref) -> const std::vector<std::size_t>& {
        auto it = neighbor_cache.find(ref);
        if (it == neighbor_cache.end()) {
            const std::size_t lo = ref < n1 ? 0 : n1;
            const std::size_t hi = ref < n1 ? n1 : gi.total_entities();
            it = neighbor_cache.emplace(ref, detail::neighbors_by_distance(emb, ref, lo, hi))
                     .first;
        }
        return it->second;
    };

    Rng rng(rng_seed);
    NegativeCache<Triple> cache;
    cache.items.reserve(triples.size());
    for (const Triple& pos : triples) {
        const std::size_t kg_size = pos.head < n1 ? n1 : gi.total_entities() - n1;
        if (kg_size < 2)
            throw InputError("sample_triple_negatives: graph has fewer than 2 entities");
        const std::size_t copies = std::min(k1, kg_size - 1);

        // Walks cand[start..] for the first replacement not forming a true
        // triple; replacement never equals the original endpoint because the
        // candidate list excludes it.
        auto corrupt = [&](bool head_side, std::size_t start) -> std::optional<Triple> {
            const std::size_t ref = head_side ? pos.head : pos.tail;
            const auto& cand = neighbors(ref);
            for (std::size_t i = start; i < cand.size(); ++i) {
                const auto repl = static_cast<EntityId>(cand[i]);
                const Triple neg = head_side ? Triple{repl, pos.relation, pos.tail}
                                             : Triple{pos.head, pos.relation, repl};
                if (!truth.count(neg)) return neg;
            }
            return std::nullopt;
        };

        std::vector<Triple> negs;
        negs.reserve(copies);
        for (std::size_t j = 0; j < copies; ++j) {
            const bool head_side = rng.below(2) == 0;
            const std::size_t start =
                uniform_fallback ? rng.below(kg_size - 1) : std::min(j, kg_size - 2);
            std::optional<Triple> neg = corrupt(head_side, start);
            if (!neg) neg = corrupt(head_side, 0);
            if (!neg) neg = corrupt(!head_side, 0);
            if (!neg)
                throw InputError("sample_triple_negatives: every corruption of a triple "
                                 "is itself a true triple");
            negs.push_back(*neg);
        }
        cache.items.push_back(std::move(negs));
    }
    return cache;
}

// For each train seed (e1, e2): pairs (e1, x) over the k2 KG2 entities nearest
// to e1, x never the true counterpart, then pairs (y, e2) over the k2 KG1
// entities nearest to e2 under the same rule. Exact brute-force neighbors,
// ties by lower entity id; no randomness.
template <typename T>
NegativeCache<std::pair<EntityId, EntityId>> mine_alignment_negatives(
    const DenseMatrix<T>& emb, const AlignmentSeeds& train_seeds, const GlobalIndex& gi,
    std::size_t k2) {
    if (k2 < 1) throw InputError("mine_alignment_negatives: k2 must be >= 1");
    if (gi.n1_entities < 2 || gi.n2_entities < 2)
        throw InputError("mine_alignment_negatives: each graph needs at least 2 entities");
    if (emb.rows() != gi.total_entities())
        throw ShapeError("mine_alignment_negatives: embedding rows != total entities");
    const std::size_t n1 = gi.n1_entities;

    NegativeCache<std::pair<EntityId, EntityId>> cache;
    cache.items.reserve(train_seeds.size());
    for (const auto& [e1, e2] : train_seeds.pairs) {
        std::vector<std::pair<EntityId, EntityId>> negs;
        std::size_t taken = 0;
        for (std::size_t g : detail::neighbors_by_distance(emb, gi.entity1(e1), n1,
                                                           gi.total_entities())) {
            if (taken == k2) break;
            const auto x = static_cast<EntityId>(g - n1);
            if (x == e2) continue;
            negs.push_back({e1, x});
            ++taken;
        }
        taken = 0;
        for (std::size_t g : detail::neighbors_by_distance(emb, gi.entity2(e2), 0, n1)) {
            if (taken == k2) break;
            const auto y = static_cast<EntityId>(g);
            if (y == e1) continue;
            negs.push_back({y, e2});
            ++taken;
        }
        cache.items.push_back(std::move(negs));
    }
    return cache;
}

}  // namespace rkdea
