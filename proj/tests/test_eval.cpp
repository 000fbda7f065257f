#include <catch2/catch_amalgamated.hpp>

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "json.hpp"
#include "oracles.hpp"
#include "rkdea/eval.hpp"

using rkdea::AlignmentSeeds;
using rkdea::DenseMatrix;
using rkdea::Direction;
using rkdea::EntityId;
using rkdea::GlobalIndex;

namespace {

GlobalIndex index_of(std::size_t n1, std::size_t n2) {
    GlobalIndex gi;
    gi.n1_entities = n1;
    gi.n2_entities = n2;
    gi.n1_relations = 1;
    gi.n2_relations = 1;
    return gi;
}

DenseMatrix<double> rows_of(std::initializer_list<std::vector<double>> rows) {
    const std::size_t d = rows.begin()->size();
    DenseMatrix<double> m(rows.size(), d);
    std::size_t i = 0;
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < d; ++j) m(i, j) = r[j];
        ++i;
    }
    return m;
}

AlignmentSeeds seeds_of(std::initializer_list<std::pair<EntityId, EntityId>> pairs) {
    AlignmentSeeds s;
    s.pairs.assign(pairs.begin(), pairs.end());
    return s;
}

}  // namespace

TEST_CASE("hits and mrr match their pinned values") {
    CHECK(rkdea::hits_at_k({1, 3, 12}, 10) == 2.0 / 3.0);
    CHECK(rkdea::hits_at_k({2, 2, 2}, 1) == 0.0);
    CHECK(rkdea::hits_at_k({1}, 1) == 1.0);
    CHECK(rkdea::mrr({1, 2, 4}) == Catch::Approx((1.0 + 0.5 + 0.25) / 3.0).margin(1e-15));
    CHECK(rkdea::mrr({5}) == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("a hand-checkable two-pair ranking") {
    const GlobalIndex gi = index_of(2, 2);
    const AlignmentSeeds test = seeds_of({{0, 0}, {1, 1}});

    SECTION("counterparts swapped in space rank second") {
        const auto emb = rows_of({{0, 0}, {10, 0}, {9, 0}, {1, 0}});
        const auto fwd = rkdea::rank_alignments(emb, test, gi, Direction::Kg1ToKg2);
        REQUIRE(fwd == std::vector<std::size_t>{2, 2});
        const auto bwd = rkdea::rank_alignments(emb, test, gi, Direction::Kg2ToKg1);
        REQUIRE(bwd == std::vector<std::size_t>{2, 2});
        CHECK(rkdea::hits_at_k(fwd, 1) == 0.0);
        CHECK(rkdea::hits_at_k(fwd, 2) == 1.0);
        CHECK(rkdea::mrr(fwd) == 0.5);
    }
    SECTION("counterparts nearby rank first") {
        const auto emb = rows_of({{0, 0}, {10, 0}, {0.1, 0}, {9.9, 0}});
        const auto fwd = rkdea::rank_alignments(emb, test, gi, Direction::Kg1ToKg2);
        REQUIRE(fwd == std::vector<std::size_t>{1, 1});
        CHECK(rkdea::mrr(fwd) == 1.0);
    }
}

TEST_CASE("ranking agrees with the brute-force sort on random instances") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const std::size_t n = 12;
        const GlobalIndex gi = index_of(n, n);
        rkdea::Rng rng(seed);

        DenseMatrix<double> emb(2 * n, 4);
        for (auto& v : emb.data()) v = rng.normal();

        // Eight test pairs with distinct counterparts on both sides.
        std::vector<EntityId> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<EntityId>(i);
        for (std::size_t i = 0; i + 1 < n; ++i)
            std::swap(perm[i], perm[i + rng.below(n - i)]);
        AlignmentSeeds test;
        for (std::size_t i = 0; i < 8; ++i)
            test.pairs.push_back({static_cast<EntityId>(i), perm[i]});

        for (const bool fwd : {true, false}) {
            const Direction dir = fwd ? Direction::Kg1ToKg2 : Direction::Kg2ToKg1;
            const auto ranks = rkdea::rank_alignments(emb, test, gi, dir);
            REQUIRE(ranks == oracle::brute_force_ranks(emb, test, gi, fwd));
            REQUIRE(rkdea::hits_at_k(ranks, 1) == oracle::reference_hits(ranks, 1));
            REQUIRE(rkdea::hits_at_k(ranks, 3) == oracle::reference_hits(ranks, 3));
            REQUIRE(rkdea::mrr(ranks) == oracle::reference_mrr(ranks));
        }
    }
}

TEST_CASE("distance ties resolve toward the lower entity id") {
    const GlobalIndex gi = index_of(2, 2);
    // Query sits exactly between the two candidates.
    const auto emb = rows_of({{0}, {100}, {-1}, {1}});

    SECTION("truth holds the higher id") {
        const auto ranks =
            rkdea::rank_alignments(emb, seeds_of({{0, 1}, {1, 0}}), gi, Direction::Kg1ToKg2);
        REQUIRE(ranks[0] == 2);
    }
    SECTION("truth holds the lower id") {
        const auto ranks =
            rkdea::rank_alignments(emb, seeds_of({{0, 0}, {1, 1}}), gi, Direction::Kg1ToKg2);
        REQUIRE(ranks[0] == 1);
    }
}

TEST_CASE("ranks are invariant under a rigid rotation of the embedding") {
    const std::size_t n = 10;
    const std::size_t d = 5;
    const GlobalIndex gi = index_of(n, n);
    rkdea::Rng rng(42);
    DenseMatrix<double> emb(2 * n, d);
    for (auto& v : emb.data()) v = rng.normal();

    AlignmentSeeds test;
    for (std::size_t i = 0; i < 6; ++i)
        test.pairs.push_back({static_cast<EntityId>(i), static_cast<EntityId>(n - 1 - i)});

    const DenseMatrix<double> q = oracle::random_rotation(d, 7);
    const DenseMatrix<double> rotated = oracle::matmul_jik(emb, q);

    for (const Direction dir : {Direction::Kg1ToKg2, Direction::Kg2ToKg1}) {
        REQUIRE(rkdea::rank_alignments(emb, test, gi, dir) ==
                rkdea::rank_alignments(rotated, test, gi, dir));
    }
}

TEST_CASE("widening the pool admits non-test distractors") {
    // KG2 entity 1 is not a test counterpart but sits closer to the query
    // than the true match does.
    const GlobalIndex gi = index_of(2, 3);
    const auto emb = rows_of({{0}, {50}, {2}, {1}, {10}});
    const AlignmentSeeds test = seeds_of({{0, 0}, {1, 2}});

    const auto restricted = rkdea::rank_alignments(emb, test, gi, Direction::Kg1ToKg2);
    REQUIRE(restricted[0] == 1);
    const auto widened = rkdea::rank_alignments(emb, test, gi, Direction::Kg1ToKg2, true);
    REQUIRE(widened[0] == 2);
}

TEST_CASE("metric identities hold on random rank lists") {
    rkdea::Rng rng(3);
    std::vector<std::size_t> ranks;
    std::size_t worst = 1;
    for (std::size_t i = 0; i < 40; ++i) {
        ranks.push_back(1 + rng.below(25));
        worst = std::max(worst, ranks.back());
    }
    double prev = 0.0;
    for (std::size_t k = 1; k <= worst; ++k) {
        const double h = rkdea::hits_at_k(ranks, k);
        REQUIRE(h >= prev);
        prev = h;
    }
    REQUIRE(rkdea::hits_at_k(ranks, worst) == 1.0);
    const double m = rkdea::mrr(ranks);
    REQUIRE(rkdea::hits_at_k(ranks, 1) <= m);
    REQUIRE(m <= 1.0);
}

TEST_CASE("metric bundles carry every requested cut") {
    const rkdea::RankingMetrics m =
        rkdea::compute_metrics({1, 2, 11}, {1, 10}, Direction::Kg2ToKg1);
    CHECK(m.hits.at(1) == 1.0 / 3.0);
    CHECK(m.hits.at(10) == 2.0 / 3.0);
    CHECK(m.mrr == Catch::Approx((1.0 + 0.5 + 1.0 / 11.0) / 3.0).margin(1e-15));
    CHECK(m.num_queries == 3);

    const nlohmann::json j = rkdea::metrics_json(m);
    CHECK(j["direction"] == "kg2->kg1");
    CHECK(j.contains("hits@1"));
    CHECK(j.contains("hits@10"));
    CHECK(j.contains("mrr"));
    CHECK(j["n"].get<std::size_t>() == 3);

    CHECK(std::string(rkdea::direction_name(Direction::Kg1ToKg2)) == "kg1->kg2");
}

TEST_CASE("evaluation rejects malformed inputs") {
    const GlobalIndex gi = index_of(2, 2);
    const auto emb = rows_of({{0}, {1}, {2}, {3}});

    CHECK_THROWS_AS(rkdea::rank_alignments(emb, AlignmentSeeds{}, gi, Direction::Kg1ToKg2),
                    rkdea::InputError);
    const auto short_emb = rows_of({{0}, {1}, {2}});
    CHECK_THROWS_AS(
        rkdea::rank_alignments(short_emb, seeds_of({{0, 0}}), gi, Direction::Kg1ToKg2),
        rkdea::ShapeError);
    CHECK_THROWS_AS(rkdea::hits_at_k({1, 2}, 0), rkdea::InputError);
    CHECK_THROWS_AS(rkdea::hits_at_k({}, 1), rkdea::InputError);
    CHECK_THROWS_AS(rkdea::mrr({}), rkdea::InputError);
}
