#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rkdea/adam.hpp"
#include "rkdea/checkpoint.hpp"
#include "rkdea/encoder.hpp"
#include "rkdea/errors.hpp"
#include "rkdea/eval.hpp"
#include "rkdea/kg.hpp"
#include "rkdea/objectives.hpp"
#include "rkdea/sampling.hpp"
#include "rkdea/tape.hpp"

namespace rkdea {

enum class Phase { Teacher, Student };

inline const char* phase_name(Phase p) { return p == Phase::Teacher ? "teacher" : "student"; }

struct TrainConfig {
    Phase phase = Phase::Teacher;
    std::size_t epochs = 500;
    double lr = 0.005;
    double gamma1 = 3.0;
    double gamma2 = 1.0;
    std::size_t k1 = 10;
    std::size_t k2 = 200;
    std::size_t refresh_interval = 50;
    std::size_t dim = 300;
    std::size_t layer_count = 2;
    bool distill = true;
    TempMode temp_mode = TempMode::Adaptive;
    double fixed_beta = 0.5;
    std::size_t kd_batch = 0;  // 0 distills over the full triple set
    std::uint64_t rng_seed = 0;
    int precision = 64;  // 32 or 64 bit scalars
    std::size_t eval_every = 0;  // 0 disables in-training Hits@1
    bool init_from_teacher = false;
    bool freeze_features = false;
    // Open interpretation point of the teacher objective: when set, entity
    // rows are unit-normalized before every loss. Off by default.
    bool normalize_emb = false;
    int threads = 1;
};

inline TrainConfig teacher_defaults() {
    TrainConfig c;
    c.phase = Phase::Teacher;
    c.lr = 0.005;
    return c;
}

inline TrainConfig student_defaults() {
    TrainConfig c;
    c.phase = Phase::Student;
    c.lr = 0.001;
    return c;
}

inline void validate_config(const TrainConfig& cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("lr must be positive");
    if (!(cfg.gamma1 > 0) || !(cfg.gamma2 > 0)) throw ConfigError("margins must be positive");
    if (cfg.k1 < 1) throw ConfigError("k1 must be >= 1");
    if (cfg.k2 < 1) throw ConfigError("k2 must be >= 1");
    if (cfg.refresh_interval < 1) throw ConfigError("refresh interval must be >= 1");
    if (cfg.dim < 1) throw ConfigError("dim must be >= 1");
    if (cfg.layer_count < 1) throw ConfigError("need at least one encoder layer");
    if (cfg.precision != 32 && cfg.precision != 64)
        throw ConfigError("precision must be 32 or 64");
    if (cfg.temp_mode == TempMode::Fixed && !(cfg.fixed_beta > 0 && cfg.fixed_beta < 1))
        throw ConfigError("fixed beta must lie in (0, 1)");
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
}

using TelemetrySink = std::function<void(const std::string&)>;

struct TrainResult {
    Checkpoint checkpoint;
    bool diverged = false;
    std::size_t completed_epochs = 0;
    LossReport final_loss;
};

namespace detail {

// Decorrelates per-epoch sampling streams from the run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline nlohmann::json config_echo(const TrainConfig& cfg, const GlobalIndex& gi) {
    nlohmann::json j;
    j["phase"] = phase_name(cfg.phase);
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["gamma1"] = cfg.gamma1;
    j["gamma2"] = cfg.gamma2;
    j["k1"] = cfg.k1;
    j["k2"] = cfg.k2;
    j["refresh_interval"] = cfg.refresh_interval;
    j["dim"] = cfg.dim;
    j["layer_count"] = cfg.layer_count;
    j["distill"] = cfg.distill;
    j["temp_mode"] = cfg.temp_mode == TempMode::Adaptive ? "adaptive" : "fixed";
    j["fixed_beta"] = cfg.fixed_beta;
    j["kd_batch"] = cfg.kd_batch;
    j["rng_seed"] = cfg.rng_seed;
    j["precision"] = cfg.precision;
    j["eval_every"] = cfg.eval_every;
    j["init_from_teacher"] = cfg.init_from_teacher;
    j["freeze_features"] = cfg.freeze_features;
    j["normalize_emb"] = cfg.normalize_emb;
    j["n_nodes"] = gi.total_entities();
    j["n1_entities"] = gi.n1_entities;
    j["n2_entities"] = gi.n2_entities;
    j["n1_relations"] = gi.n1_relations;
    j["n2_relations"] = gi.n2_relations;
    return j;
}

inline nlohmann::json loss_json(const LossReport& r, Phase phase) {
    nlohmann::json j;
    if (phase == Phase::Teacher) {
        j["l_ke"] = r.l_ke;
    } else {
        j["l_nc"] = r.l_nc;
        j["l_kd"] = r.l_kd;
        j["beta"] = r.beta;
    }
    j["total"] = r.total;
    j["step"] = r.step;
    return j;
}

template <typename T>
Checkpoint make_checkpoint(const EncoderParams<T>& enc, const DenseMatrix<T>* rel,
                           const TrainConfig& cfg, const GlobalIndex& gi,
                           const LossReport& report) {
    Checkpoint ck;
    append_encoder_tensors(enc, ck.tensors);
    if (rel) ck.tensors.push_back(TensorBlock::from_matrix("rel_emb", *rel));
    ck.config = config_echo(cfg, gi);
    ck.loss = loss_json(report, cfg.phase);
    return ck;
}

template <typename T>
void append_encoder_param_refs(Tape<T>& tape, const EncoderNodes& nodes, EncoderParams<T>& enc,
                               std::vector<ParamRef<T>>& out) {
    if (!enc.freeze_features) out.push_back({"X", &enc.X, &tape.grad(nodes.x)});
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        out.push_back({layer_tensor_name(l, "W"), &enc.layers[l].W, &tape.grad(nodes.layers[l].w)});
        out.push_back(
            {layer_tensor_name(l, "W_T"), &enc.layers[l].W_T, &tape.grad(nodes.layers[l].w_t)});
        out.push_back(
            {layer_tensor_name(l, "b_T"), &enc.layers[l].b_T, &tape.grad(nodes.layers[l].b_t)});
    }
}

template <typename T>
void normalize_rows(DenseMatrix<T>& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        T* r = m.row(i);
        double s = 0;
        for (std::size_t j = 0; j < m.cols(); ++j) s += static_cast<double>(r[j]) * r[j];
        const double n = std::sqrt(s);
        if (n > 0)
            for (std::size_t j = 0; j < m.cols(); ++j) r[j] = static_cast<T>(r[j] / n);
    }
}

template <typename T>
TrainResult train_teacher_impl(const DatasetBundle& bundle, const TrainConfig& cfg,
                               const TelemetrySink& sink) {
    const GlobalIndex gi(bundle);
    const std::vector<Triple> triples = global_triples(bundle);
    if (triples.empty()) throw InputError("train_teacher: dataset has no triples");
    const SparseMatrix<T> a_norm = build_joint_adjacency<T>(bundle.kg1, bundle.kg2);

    Rng rng(cfg.rng_seed);
    EncoderParams<T> enc = init_encoder_params<T>(gi.total_entities(), cfg.dim, cfg.layer_count,
                                                  rng, bundle.features, cfg.freeze_features);
    DenseMatrix<T> rel(gi.total_relations(), cfg.dim);
    const double rel_scale = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    for (auto& v : rel.data()) v = static_cast<T>(rel_scale * rng.normal());

    OptimizerState<T> opt;
    LossReport report;
    Checkpoint last_good = make_checkpoint(enc, &rel, cfg, gi, report);
    NegativeCache<Triple> cache;

    std::size_t epoch = 0;
    bool diverged = false;
    try {
        for (; epoch < cfg.epochs; ++epoch) {
            Tape<T> tape(cfg.threads, true);
            EncoderNodes nodes = encode(tape, enc, a_norm);
            NodeId emb = nodes.output;
            if (cfg.normalize_emb) emb = tape.row_normalize(emb);
            const NodeId rel_leaf = tape.leaf(rel, true);

            if (refresh_due(epoch, cfg.refresh_interval)) {
                cache = sample_triple_negatives(tape.value(emb), triples, gi, cfg.k1,
                                                mix_seed(cfg.rng_seed, epoch), epoch == 0);
                cache.epoch_of_last_refresh = epoch;
            }

            const NodeId loss =
                transe_loss(tape, emb, rel_leaf, triples, cache, static_cast<T>(cfg.gamma1));
            report.l_ke = report.total = static_cast<double>(tape.value(loss)(0, 0));
            report.step = epoch + 1;
            tape.backward(loss);

            std::vector<ParamRef<T>> params;
            append_encoder_param_refs(tape, nodes, enc, params);
            params.push_back({"rel_emb", &rel, &tape.grad(rel_leaf)});
            adam_step(params, opt, static_cast<T>(cfg.lr));
            last_good = make_checkpoint(enc, &rel, cfg, gi, report);
            if (sink) {
                nlohmann::json line{
                    {"epoch", epoch}, {"l_ke", report.l_ke}, {"total", report.total}};
                sink(line.dump());
            }
        }
    } catch (const NumericError&) {
        diverged = true;
    }
    return {std::move(last_good), diverged, epoch, report};
}

template <typename T>
TrainResult train_student_impl(const DatasetBundle& bundle, const Checkpoint& teacher,
                               const TrainConfig& cfg, const TelemetrySink& sink) {
    const GlobalIndex gi(bundle);
    const std::vector<Triple> triples = global_triples(bundle);
    const SparseMatrix<T> a_norm = build_joint_adjacency<T>(bundle.kg1, bundle.kg2);

    if (teacher.config.value("phase", std::string{}) != "teacher")
        throw ConfigError("student training requires a teacher-phase checkpoint");
    if (teacher.config.value("dim", std::size_t{0}) != cfg.dim)
        throw ConfigError("teacher checkpoint dim does not match the configured dim");
    if (teacher.config.value("n_nodes", std::size_t{0}) != gi.total_entities())
        throw ConfigError("teacher checkpoint was trained on a different node count");
    if (teacher.config.value("precision", 64) != cfg.precision)
        throw ConfigError("teacher checkpoint precision does not match the configured precision");

    EncoderParams<T> teacher_params = encoder_params_from_checkpoint<T>(teacher);
    if (cfg.init_from_teacher && teacher_params.layers.size() != cfg.layer_count)
        throw ConfigError("teacher layer count does not match the configured layer count");

    Rng rng(cfg.rng_seed);
    EncoderParams<T> enc;
    if (cfg.init_from_teacher) {
        enc = teacher_params;
        enc.freeze_features = cfg.freeze_features;
    } else {
        enc = init_encoder_params<T>(gi.total_entities(), cfg.dim, cfg.layer_count, rng,
                                     bundle.features, cfg.freeze_features);
    }

    OptimizerState<T> opt;
    LossReport report;
    Checkpoint last_good = make_checkpoint<T>(enc, nullptr, cfg, gi, report);
    NegativeCache<std::pair<EntityId, EntityId>> cache;

    std::size_t epoch = 0;
    bool diverged = false;
    try {
        // The teacher side of the distillation is a constant of the run.
        DenseMatrix<T> teacher_emb = encode_values(teacher_params, a_norm, cfg.threads);
        if (cfg.normalize_emb) normalize_rows(teacher_emb);
        DenseMatrix<T> teacher_psi;
        if (cfg.distill)
            teacher_psi = psi_column<T, T>(teacher_emb, triples, compute_mu(teacher_emb, triples));

        for (; epoch < cfg.epochs; ++epoch) {
            Tape<T> tape(cfg.threads, true);
            EncoderNodes nodes = encode(tape, enc, a_norm);
            NodeId emb = nodes.output;
            if (cfg.normalize_emb) emb = tape.row_normalize(emb);

            if (refresh_due(epoch, cfg.refresh_interval)) {
                cache = mine_alignment_negatives(tape.value(emb), bundle.train_seeds, gi, cfg.k2);
                cache.epoch_of_last_refresh = epoch;
            }

            const NodeId l_nc =
                nc_loss(tape, emb, bundle.train_seeds, cache, gi, static_cast<T>(cfg.gamma2));
            std::optional<NodeId> l_kd;
            if (cfg.distill) {
                const double mu_s = compute_mu(tape.value(emb), triples);
                if (cfg.kd_batch == 0 || cfg.kd_batch >= triples.size()) {
                    l_kd = kd_loss(tape, teacher_psi, emb, triples, mu_s);
                } else {
                    // Partial Fisher-Yates draw of kd_batch distinct triples.
                    std::vector<std::size_t> pool(triples.size());
                    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
                    std::vector<Triple> sub(cfg.kd_batch);
                    DenseMatrix<T> psi_sub(cfg.kd_batch, 1);
                    for (std::size_t i = 0; i < cfg.kd_batch; ++i) {
                        const std::size_t j = i + rng.below(pool.size() - i);
                        std::swap(pool[i], pool[j]);
                        sub[i] = triples[pool[i]];
                        psi_sub(i, 0) = teacher_psi(pool[i], 0);
                    }
                    l_kd = kd_loss(tape, psi_sub, emb, sub, mu_s);
                }
            }

            const StudentLoss total =
                student_total_loss(tape, l_nc, l_kd, cfg.temp_mode, cfg.fixed_beta, epoch + 1);
            report = total.report;
            report.step = epoch + 1;

            std::optional<double> hits1;
            if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !bundle.test_seeds.empty()) {
                const auto ranks = rank_alignments(tape.value(emb), bundle.test_seeds, gi,
                                                   Direction::Kg1ToKg2);
                hits1 = hits_at_k(ranks, 1);
            }

            tape.backward(total.total);
            std::vector<ParamRef<T>> params;
            append_encoder_param_refs(tape, nodes, enc, params);
            adam_step(params, opt, static_cast<T>(cfg.lr));
            last_good = make_checkpoint<T>(enc, nullptr, cfg, gi, report);
            if (sink) {
                nlohmann::json line{{"epoch", epoch},
                                    {"l_nc", report.l_nc},
                                    {"l_kd", report.l_kd},
                                    {"beta", report.beta},
                                    {"total", report.total}};
                if (hits1) line["hits1"] = *hits1;
                sink(line.dump());
            }
        }
    } catch (const NumericError&) {
        diverged = true;
    }
    return {std::move(last_good), diverged, epoch, report};
}

}  // namespace detail

// Pretrains the relation-aware teacher: highway GCN embeddings plus free
// relation vectors under the translation margin loss, hard negatives
// refreshed on the configured schedule. Divergence (any non-finite value)
// aborts with the last finite checkpoint instead of throwing.
inline TrainResult train_teacher(const DatasetBundle& bundle, const TrainConfig& cfg,
                                 const TelemetrySink& sink = {}) {
    validate_config(cfg);
    if (cfg.phase != Phase::Teacher) throw ConfigError("train_teacher: config phase is not teacher");
    return cfg.precision == 64 ? detail::train_teacher_impl<double>(bundle, cfg, sink)
                               : detail::train_teacher_impl<float>(bundle, cfg, sink);
}

// Trains the student against the frozen teacher: consensus margin loss over
// mined cross-graph negatives, plus the distillation term mixed by the
// adaptive (or fixed) temperature. The teacher's mu and psi column are
// computed once; the student's mu is recomputed every epoch.
inline TrainResult train_student(const DatasetBundle& bundle, const Checkpoint& teacher,
                                 const TrainConfig& cfg, const TelemetrySink& sink = {}) {
    validate_config(cfg);
    if (cfg.phase != Phase::Student) throw ConfigError("train_student: config phase is not student");
    return cfg.precision == 64 ? detail::train_student_impl<double>(bundle, teacher, cfg, sink)
                               : detail::train_student_impl<float>(bundle, teacher, cfg, sink);
}

}  // namespace rkdea
