#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "rkdea/checkpoint.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/matrix.hpp"
#include "rkdea/rng.hpp"

namespace rkdea {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend bool operator==(const Triple& a, const Triple& b) {
        return a.head == b.head && a.relation == b.relation && a.tail == b.tail;
    }
    friend bool operator<(const Triple& a, const Triple& b) {
        return std::tie(a.head, a.relation, a.tail) < std::tie(b.head, b.relation, b.tail);
    }
};

struct KnowledgeGraph {
    std::size_t num_entities = 0;
    std::size_t num_relations = 0;
    std::vector<Triple> triples;
    std::map<EntityId, std::string> entity_names;
};

// Ordered (KG1 entity, KG2 entity) pairs, ids local to their graphs.
struct AlignmentSeeds {
    std::vector<std::pair<EntityId, EntityId>> pairs;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

struct DatasetBundle {
    KnowledgeGraph kg1, kg2;
    AlignmentSeeds train_seeds, test_seeds;
    // Row layout: KG1 entities first, then KG2 (same convention as GlobalIndex).
    std::optional<DenseMatrix<double>> features;
};

// KG2 rows sit behind KG1 rows in every joint table (embeddings, adjacency,
// relation embeddings), so local ids translate by a fixed offset.
struct GlobalIndex {
    std::size_t n1_entities = 0, n2_entities = 0;
    std::size_t n1_relations = 0, n2_relations = 0;

    GlobalIndex() = default;
    explicit GlobalIndex(const DatasetBundle& b)
        : n1_entities(b.kg1.num_entities),
          n2_entities(b.kg2.num_entities),
          n1_relations(b.kg1.num_relations),
          n2_relations(b.kg2.num_relations) {}

    std::size_t entity1(EntityId e) const { return e; }
    std::size_t entity2(EntityId e) const { return n1_entities + e; }
    std::size_t relation1(RelationId r) const { return r; }
    std::size_t relation2(RelationId r) const { return n1_relations + r; }
    std::size_t total_entities() const { return n1_entities + n2_entities; }
    std::size_t total_relations() const { return n1_relations + n2_relations; }
};

// Both graphs' triples in one list under global entity and relation ids; the
// teacher objective and the distillation triple set run over this union.
inline std::vector<Triple> global_triples(const DatasetBundle& b) {
    GlobalIndex gi(b);
    std::vector<Triple> out;
    out.reserve(b.kg1.triples.size() + b.kg2.triples.size());
    for (const Triple& t : b.kg1.triples) out.push_back(t);
    for (const Triple& t : b.kg2.triples)
        out.push_back({static_cast<EntityId>(gi.entity2(t.head)),
                       static_cast<RelationId>(gi.relation2(t.relation)),
                       static_cast<EntityId>(gi.entity2(t.tail))});
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::uint32_t parse_id(std::string_view s, const std::string& source, std::size_t line) {
    std::uint32_t v = 0;
    const char* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v, 10);
    if (ec != std::errc{} || p != end || s.empty())
        throw ParseError(source + ":" + std::to_string(line) + ": '" + std::string(s) +
                         "' is not a non-negative integer id");
    return v;
}

// Strips one trailing CR so CRLF files parse like LF files.
inline void chomp(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline bool skippable(const std::string& line) { return line.empty() || line[0] == '#'; }

}  // namespace detail

// Lines `head<TAB>relation<TAB>tail`; blank lines and `#` comments skipped;
// exact duplicate triples collapse to their first occurrence. Ids at or above
// the declared counts are malformed input, reported with their line number.
inline KnowledgeGraph parse_triples(std::istream& in, std::size_t num_entities,
                                    std::size_t num_relations,
                                    const std::string& source = "<stream>") {
    KnowledgeGraph kg;
    kg.num_entities = num_entities;
    kg.num_relations = num_relations;
    std::set<Triple> seen;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        detail::chomp(line);
        if (detail::skippable(line)) continue;
        const auto fields = detail::split_tabs(line);
        if (fields.size() != 3)
            throw ParseError(source + ":" + std::to_string(lineno) +
                             ": expected 3 tab-separated fields, got " +
                             std::to_string(fields.size()));
        Triple t{detail::parse_id(fields[0], source, lineno),
                 detail::parse_id(fields[1], source, lineno),
                 detail::parse_id(fields[2], source, lineno)};
        if (t.head >= num_entities || t.tail >= num_entities)
            throw ParseError(source + ":" + std::to_string(lineno) + ": entity id exceeds " +
                             std::to_string(num_entities) + " declared entities");
        if (t.relation >= num_relations)
            throw ParseError(source + ":" + std::to_string(lineno) + ": relation id exceeds " +
                             std::to_string(num_relations) + " declared relations");
        if (seen.insert(t).second) kg.triples.push_back(t);
    }
    return kg;
}

inline KnowledgeGraph parse_triples(const std::string& path, std::size_t num_entities,
                                    std::size_t num_relations) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    return parse_triples(f, num_entities, num_relations, path);
}

// Lines `id1<TAB>id2`. Exact duplicate pairs collapse; an entity recurring in
// two distinct pairs on the same side breaks the one-to-one seed assumption.
inline AlignmentSeeds parse_alignments(std::istream& in, const std::string& source = "<stream>") {
    AlignmentSeeds seeds;
    std::set<std::pair<EntityId, EntityId>> seen;
    std::set<EntityId> used1, used2;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        detail::chomp(line);
        if (detail::skippable(line)) continue;
        const auto fields = detail::split_tabs(line);
        if (fields.size() != 2)
            throw ParseError(source + ":" + std::to_string(lineno) +
                             ": expected 2 tab-separated fields, got " +
                             std::to_string(fields.size()));
        const std::pair<EntityId, EntityId> p{detail::parse_id(fields[0], source, lineno),
                                              detail::parse_id(fields[1], source, lineno)};
        if (!seen.insert(p).second) continue;
        if (!used1.insert(p.first).second)
            throw IntegrityError(source + ":" + std::to_string(lineno) + ": KG1 entity " +
                                 std::to_string(p.first) + " appears in more than one pair");
        if (!used2.insert(p.second).second)
            throw IntegrityError(source + ":" + std::to_string(lineno) + ": KG2 entity " +
                                 std::to_string(p.second) + " appears in more than one pair");
        seeds.pairs.push_back(p);
    }
    return seeds;
}

inline AlignmentSeeds parse_alignments(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    return parse_alignments(f, path);
}

// Deterministic shuffle, then the first floor(n * train_fraction) pairs train
// and the rest test.
inline std::pair<AlignmentSeeds, AlignmentSeeds> split_seeds(const AlignmentSeeds& seeds,
                                                             double train_fraction,
                                                             std::uint64_t rng_seed) {
    if (seeds.empty()) throw InputError("split_seeds: empty seed list");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InputError("split_seeds: train_fraction must lie in (0, 1)");
    auto pairs = seeds.pairs;
    Rng rng(rng_seed);
    rng.shuffle(pairs);
    const auto n_train =
        static_cast<std::size_t>(static_cast<double>(pairs.size()) * train_fraction);
    AlignmentSeeds train, test;
    train.pairs.assign(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(n_train), pairs.end());
    return {std::move(train), std::move(test)};
}

// Symmetric-normalized joint adjacency D^{-1/2} (A+I) D^{-1/2} over the
// concatenated node set. Connectivity is undirected and binary: relation
// labels are dropped, parallel edges collapse, the two graphs stay in
// disjoint diagonal blocks.
template <typename T = double>
SparseMatrix<T> build_joint_adjacency(const KnowledgeGraph& kg1, const KnowledgeGraph& kg2) {
    const std::size_t n1 = kg1.num_entities;
    const std::size_t n = n1 + kg2.num_entities;
    std::set<std::pair<std::size_t, std::size_t>> edges;
    auto add = [&edges](std::size_t a, std::size_t b) {
        if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
    };
    for (const Triple& t : kg1.triples) add(t.head, t.tail);
    for (const Triple& t : kg2.triples) add(n1 + t.head, n1 + t.tail);

    std::vector<std::size_t> deg(n, 1);  // self-loop from A+I
    for (const auto& [a, b] : edges) {
        ++deg[a];
        ++deg[b];
    }
    std::vector<typename SparseMatrix<T>::Entry> entries;
    entries.reserve(n + 2 * edges.size());
    for (std::size_t i = 0; i < n; ++i)
        entries.push_back({i, i, T{1} / static_cast<T>(deg[i])});
    for (const auto& [a, b] : edges) {
        const T v = static_cast<T>(1.0 / std::sqrt(static_cast<double>(deg[a]) *
                                                   static_cast<double>(deg[b])));
        entries.push_back({a, b, v});
        entries.push_back({b, a, v});
    }
    return SparseMatrix<T>::from_coo(n, n, std::move(entries));
}

struct SyntheticSpec {
    std::size_t n_entities = 200;
    std::size_t n_relations = 4;
    std::size_t n_triples = 600;
    // Fraction of the true pairs exposed as seeds at all; the exposed seeds
    // are then split train/test by train_fraction.
    double seed_fraction = 1.0;
    double train_fraction = 0.3;
    double edge_dropout = 0.0;
    double feature_noise = 0.0;
    std::size_t feature_dim = 300;
    std::uint64_t rng_seed = 0;
};

// KG1 is a random connected graph (spanning-tree backbone plus uniform extra
// triples); KG2 is its image under a random entity permutation with optional
// dropout of non-backbone triples. Aligned entities share a feature base
// vector, perturbed per side by feature_noise. Fully determined by rng_seed.
inline DatasetBundle generate_synthetic(const SyntheticSpec& spec) {
    const std::size_t n = spec.n_entities;
    if (n < 2) throw InputError("generate_synthetic: need at least 2 entities");
    if (spec.n_relations < 1) throw InputError("generate_synthetic: need at least 1 relation");
    if (spec.n_triples < n - 1)
        throw InputError("generate_synthetic: n_triples must be >= n_entities - 1");
    if (spec.n_triples > n * (n - 1) * spec.n_relations)
        throw InputError("generate_synthetic: n_triples exceeds the distinct-triple capacity");
    if (!(spec.edge_dropout >= 0.0 && spec.edge_dropout < 1.0))
        throw InputError("generate_synthetic: edge_dropout must lie in [0, 1)");
    if (!(spec.seed_fraction > 0.0 && spec.seed_fraction <= 1.0))
        throw InputError("generate_synthetic: seed_fraction must lie in (0, 1]");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw InputError("generate_synthetic: train_fraction must lie in (0, 1)");
    if (spec.feature_dim < 1) throw InputError("generate_synthetic: feature_dim must be >= 1");
    if (!(spec.feature_noise >= 0.0))
        throw InputError("generate_synthetic: feature_noise must be >= 0");

    Rng rng(spec.rng_seed);
    DatasetBundle bundle;
    auto& kg1 = bundle.kg1;
    kg1.num_entities = n;
    kg1.num_relations = spec.n_relations;

    // Backbone: entity i attaches to a uniformly chosen earlier entity, in a
    // random direction, so the graph is connected by construction.
    std::set<Triple> seen;
    for (EntityId i = 1; i < n; ++i) {
        const auto parent = static_cast<EntityId>(rng.below(i));
        const auto rel = static_cast<RelationId>(rng.below(spec.n_relations));
        const Triple t = rng.below(2) == 0 ? Triple{parent, rel, i} : Triple{i, rel, parent};
        seen.insert(t);
        kg1.triples.push_back(t);
    }
    while (kg1.triples.size() < spec.n_triples) {
        const auto h = static_cast<EntityId>(rng.below(n));
        const auto t = static_cast<EntityId>(rng.below(n));
        const auto r = static_cast<RelationId>(rng.below(spec.n_relations));
        if (h == t) continue;
        const Triple tr{h, r, t};
        if (!seen.insert(tr).second) continue;
        kg1.triples.push_back(tr);
    }

    std::vector<EntityId> perm(n);
    for (EntityId i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    auto& kg2 = bundle.kg2;
    kg2.num_entities = n;
    kg2.num_relations = spec.n_relations;
    for (const Triple& t : kg1.triples)
        kg2.triples.push_back({perm[t.head], t.relation, perm[t.tail]});

    // Dropout may only delete image triples outside the backbone prefix so
    // KG2 stays connected.
    const std::size_t backbone = n - 1;
    const std::size_t droppable = kg2.triples.size() - backbone;
    const auto want_drop = static_cast<std::size_t>(spec.edge_dropout *
                                                    static_cast<double>(kg2.triples.size()));
    const std::size_t n_drop = std::min(want_drop, droppable);
    if (n_drop > 0) {
        std::vector<std::size_t> idx(droppable);
        for (std::size_t i = 0; i < droppable; ++i) idx[i] = backbone + i;
        rng.shuffle(idx);
        std::set<std::size_t> drop(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_drop));
        std::vector<Triple> kept;
        kept.reserve(kg2.triples.size() - n_drop);
        for (std::size_t i = 0; i < kg2.triples.size(); ++i)
            if (!drop.count(i)) kept.push_back(kg2.triples[i]);
        kg2.triples = std::move(kept);
    }

    AlignmentSeeds exposed;
    if (spec.seed_fraction >= 1.0) {
        for (EntityId i = 0; i < n; ++i) exposed.pairs.push_back({i, perm[i]});
    } else {
        std::vector<EntityId> order(n);
        for (EntityId i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        const auto keep =
            static_cast<std::size_t>(static_cast<double>(n) * spec.seed_fraction);
        order.resize(std::max<std::size_t>(keep, 1));
        std::sort(order.begin(), order.end());
        for (EntityId i : order) exposed.pairs.push_back({i, perm[i]});
    }
    std::tie(bundle.train_seeds, bundle.test_seeds) =
        split_seeds(exposed, spec.train_fraction, spec.rng_seed);

    const std::size_t d = spec.feature_dim;
    DenseMatrix<double> base(n, d);
    for (auto& v : base.data()) v = rng.normal();
    DenseMatrix<double> feat(2 * n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            feat(i, j) = base(i, j) + spec.feature_noise * rng.normal();
    std::vector<EntityId> invperm(n);
    for (EntityId i = 0; i < n; ++i) invperm[perm[i]] = i;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            feat(n + i, j) = base(invperm[i], j) + spec.feature_noise * rng.normal();
    bundle.features = std::move(feat);
    return bundle;
}

inline void write_triples(const std::string& path, const KnowledgeGraph& kg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    for (const Triple& t : kg.triples)
        f << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
    if (!f) throw InputError("write failed for '" + path + "'");
}

inline void write_alignments(const std::string& path, const AlignmentSeeds& seeds) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    for (const auto& [a, b] : seeds.pairs) f << a << '\t' << b << '\n';
    if (!f) throw InputError("write failed for '" + path + "'");
}

constexpr const char* kFeaturesTensor = "features";

// Directory layout: triples_1, triples_2, ref_ent_ids, optional ent_ids_1 and
// ent_ids_2 (id<TAB>name), optional features.f32 (single-tensor container in
// the checkpoint format). ref_ent_ids lists the exposed seed pairs sorted by
// KG1 id; consumers split it themselves so train and eval agree on the split
// by sharing (train_fraction, split rng seed).
inline void write_dataset_dir(const std::string& dir, const DatasetBundle& bundle) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_triples(dir + "/triples_1", bundle.kg1);
    write_triples(dir + "/triples_2", bundle.kg2);

    AlignmentSeeds all;
    all.pairs = bundle.train_seeds.pairs;
    all.pairs.insert(all.pairs.end(), bundle.test_seeds.pairs.begin(),
                     bundle.test_seeds.pairs.end());
    std::sort(all.pairs.begin(), all.pairs.end());
    write_alignments(dir + "/ref_ent_ids", all);

    if (bundle.features) {
        Checkpoint ckpt;
        ckpt.tensors.push_back(
            TensorBlock::from_matrix(kFeaturesTensor, bundle.features->cast<float>()));
        save_checkpoint(ckpt, dir + "/features.f32");
    }
}

inline DatasetBundle load_dataset_dir(const std::string& dir, double train_fraction = 0.3,
                                      std::uint64_t split_rng = 0) {
    namespace fs = std::filesystem;
    auto require = [&dir](const char* name) {
        const std::string p = dir + "/" + name;
        if (!fs::exists(p)) throw InputError("dataset '" + dir + "' lacks " + name);
        return p;
    };

    struct Raw {
        std::vector<Triple> triples;
        EntityId max_e = 0;
        RelationId max_r = 0;
        bool any = false;
    };
    auto scan = [](const std::string& path) {
        // Syntax checked here; id bounds only after counts are inferred.
        Raw raw;
        std::ifstream f(path);
        if (!f) throw InputError("cannot open '" + path + "'");
        std::string line;
        std::set<Triple> seen;
        for (std::size_t lineno = 1; std::getline(f, line); ++lineno) {
            detail::chomp(line);
            if (detail::skippable(line)) continue;
            const auto fields = detail::split_tabs(line);
            if (fields.size() != 3)
                throw ParseError(path + ":" + std::to_string(lineno) +
                                 ": expected 3 tab-separated fields, got " +
                                 std::to_string(fields.size()));
            Triple t{detail::parse_id(fields[0], path, lineno),
                     detail::parse_id(fields[1], path, lineno),
                     detail::parse_id(fields[2], path, lineno)};
            raw.max_e = std::max({raw.max_e, t.head, t.tail});
            raw.max_r = std::max(raw.max_r, t.relation);
            raw.any = true;
            if (seen.insert(t).second) raw.triples.push_back(t);
        }
        return raw;
    };

    const Raw raw1 = scan(require("triples_1"));
    const Raw raw2 = scan(require("triples_2"));
    AlignmentSeeds refs = parse_alignments(require("ref_ent_ids"));

    std::size_t n1 = raw1.any ? raw1.max_e + 1 : 0;
    std::size_t n2 = raw2.any ? raw2.max_e + 1 : 0;
    for (const auto& [a, b] : refs.pairs) {
        n1 = std::max<std::size_t>(n1, a + 1);
        n2 = std::max<std::size_t>(n2, b + 1);
    }

    auto load_names = [&](const char* name, std::size_t& count, std::map<EntityId, std::string>& out) {
        const std::string p = dir + "/" + name;
        if (!fs::exists(p)) return;
        std::ifstream f(p);
        if (!f) throw InputError("cannot open '" + p + "'");
        std::string line;
        for (std::size_t lineno = 1; std::getline(f, line); ++lineno) {
            detail::chomp(line);
            if (detail::skippable(line)) continue;
            const std::size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw ParseError(p + ":" + std::to_string(lineno) + ": expected id<TAB>name");
            const EntityId id = detail::parse_id(std::string_view(line).substr(0, tab), p, lineno);
            out[id] = line.substr(tab + 1);
            count = std::max<std::size_t>(count, id + 1);
        }
    };

    DatasetBundle bundle;
    load_names("ent_ids_1", n1, bundle.kg1.entity_names);
    load_names("ent_ids_2", n2, bundle.kg2.entity_names);

    bundle.kg1.num_entities = n1;
    bundle.kg1.num_relations = raw1.any ? raw1.max_r + 1 : 0;
    bundle.kg1.triples = raw1.triples;
    bundle.kg2.num_entities = n2;
    bundle.kg2.num_relations = raw2.any ? raw2.max_r + 1 : 0;
    bundle.kg2.triples = raw2.triples;

    const std::string fpath = dir + "/features.f32";
    if (fs::exists(fpath)) {
        const Checkpoint ckpt = load_checkpoint(fpath);
        DenseMatrix<float> f = ckpt.require(kFeaturesTensor).to_matrix<float>();
        if (f.rows() != n1 + n2)
            throw IntegrityError("features.f32 has " + std::to_string(f.rows()) +
                                 " rows, expected " + std::to_string(n1 + n2));
        bundle.features = f.cast<double>();
    }

    std::tie(bundle.train_seeds, bundle.test_seeds) =
        split_seeds(refs, train_fraction, split_rng);
    return bundle;
}

}  // namespace rkdea
