// Command-line front end: dataset generation, the two training phases,
// ranking evaluation, and the built-in self-check suite. Every mutating run
// writes a manifest (resolved config + input digest) before its outputs so
// runs can be reproduced and compared byte for byte.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rkdea/rkdea.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::string digest_string(std::uint64_t h) {
    std::ostringstream os;
    os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string read_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw rkdea::InputError("cannot open " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Content hash over the run's input files, in a fixed order, with each
// file's basename mixed in so renames change the digest.
std::string dataset_digest(const fs::path& data_dir, const std::vector<fs::path>& extra) {
    std::uint64_t h = kFnvOffset;
    const char* names[] = {"triples_1", "triples_2", "ref_ent_ids",
                           "ent_ids_1", "ent_ids_2", "features.f32"};
    for (const char* name : names) {
        const fs::path p = data_dir / name;
        if (!fs::exists(p)) continue;
        h = fnv1a64(name, h);
        h = fnv1a64(read_file_bytes(p), h);
    }
    for (const fs::path& p : extra) {
        h = fnv1a64(p.filename().string(), h);
        h = fnv1a64(read_file_bytes(p), h);
    }
    return digest_string(h);
}

void write_text_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw rkdea::InputError("cannot write " + p.string());
    out << text;
    if (!out) throw rkdea::InputError("short write to " + p.string());
}

json manifest_json(const std::string& command, const json& config, const std::string& digest,
                   std::uint64_t rng_seed) {
    return json{{"command", command},
                {"config", config},
                {"dataset_digest", digest},
                {"rng_seed", rng_seed},
                {"tool_version", rkdea::kVersionString}};
}

std::vector<std::size_t> parse_k_list(const std::string& spec) {
    std::vector<std::size_t> ks;
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string item = spec.substr(pos, comma - pos);
        std::size_t k = 0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
        if (ec != std::errc{} || ptr != item.data() + item.size() || k < 1)
            throw rkdea::ConfigError("--k expects a comma-separated list of positive integers");
        ks.push_back(k);
        pos = comma + 1;
    }
    return ks;
}

struct GenOpts {
    std::string out;
    rkdea::SyntheticSpec spec;
    bool force = false;
};

int run_gen(const GenOpts& o) {
    const fs::path out(o.out);
    if (fs::exists(out) && !fs::is_empty(out) && !o.force)
        throw rkdea::InputError("output directory " + o.out +
                                " is not empty (pass --force to overwrite)");

    json config{{"out", o.out},
                {"entities", o.spec.n_entities},
                {"relations", o.spec.n_relations},
                {"triples", o.spec.n_triples},
                {"seed_fraction", o.spec.seed_fraction},
                {"train_fraction", o.spec.train_fraction},
                {"edge_dropout", o.spec.edge_dropout},
                {"feature_noise", o.spec.feature_noise},
                {"feature_dim", o.spec.feature_dim},
                {"rng_seed", o.spec.rng_seed}};
    // Generation is a pure function of the resolved config, so the digest
    // covers the config rather than not-yet-written outputs. Generating
    // before writing keeps a rejected config from leaving a partial
    // directory behind.
    const rkdea::DatasetBundle bundle = rkdea::generate_synthetic(o.spec);
    const std::string digest = digest_string(fnv1a64(config.dump()));
    fs::create_directories(out);
    write_text_file(out / "manifest.json",
                    manifest_json("gen", config, digest, o.spec.rng_seed).dump(2) + "\n");
    rkdea::write_dataset_dir(out.string(), bundle);
    std::cout << "wrote " << o.out << ": " << bundle.kg1.num_entities << "+"
              << bundle.kg2.num_entities << " entities, " << bundle.kg1.triples.size() << "+"
              << bundle.kg2.triples.size() << " triples, "
              << bundle.train_seeds.size() + bundle.test_seeds.size() << " reference pairs\n";
    return 0;
}

struct TrainOpts {
    std::string data;
    std::string phase;
    std::string ckpt;
    std::string teacher;
    std::string log;
    std::string preset;
    rkdea::TrainConfig cfg;
    double lr = 0;
    bool lr_given = false;
    bool k1_given = false;
    bool k2_given = false;
    bool refresh_given = false;
    double fixed_beta = 0;
    bool fixed_beta_given = false;
    bool no_distill = false;
    double train_fraction = 0.3;
    std::uint64_t split_rng = 0;
};

int run_train(TrainOpts& o) {
    rkdea::TrainConfig cfg =
        o.phase == "teacher" ? rkdea::teacher_defaults() : rkdea::student_defaults();
    const rkdea::TrainConfig& flags = o.cfg;
    cfg.epochs = flags.epochs;
    cfg.gamma1 = flags.gamma1;
    cfg.gamma2 = flags.gamma2;
    cfg.k1 = flags.k1;
    cfg.k2 = flags.k2;
    cfg.refresh_interval = flags.refresh_interval;
    cfg.dim = flags.dim;
    cfg.layer_count = flags.layer_count;
    cfg.kd_batch = flags.kd_batch;
    cfg.rng_seed = flags.rng_seed;
    cfg.precision = flags.precision;
    cfg.eval_every = flags.eval_every;
    cfg.init_from_teacher = flags.init_from_teacher;
    cfg.freeze_features = flags.freeze_features;
    cfg.normalize_emb = flags.normalize_emb;
    cfg.threads = flags.threads;
    if (o.lr_given) cfg.lr = o.lr;
    if (o.no_distill) cfg.distill = false;
    if (o.fixed_beta_given) {
        cfg.temp_mode = rkdea::TempMode::Fixed;
        cfg.fixed_beta = o.fixed_beta;
    }
    if (!o.preset.empty()) {
        // Presets fill in only the knobs the user left untouched.
        const bool dbp = o.preset == "dbp15k";
        if (!o.k1_given) cfg.k1 = 10;
        if (!o.k2_given) cfg.k2 = dbp ? 200 : 50;
        if (!o.refresh_given) cfg.refresh_interval = dbp ? 50 : 10;
    }
    rkdea::validate_config(cfg);
    if (cfg.phase == rkdea::Phase::Student && o.teacher.empty())
        throw rkdea::ConfigError("student phase requires --teacher CKPT");

    const rkdea::DatasetBundle bundle =
        rkdea::load_dataset_dir(o.data, o.train_fraction, o.split_rng);
    const rkdea::GlobalIndex gi(bundle);

    rkdea::Checkpoint teacher;
    std::vector<fs::path> digest_extra;
    if (cfg.phase == rkdea::Phase::Student) {
        teacher = rkdea::load_checkpoint(o.teacher);
        digest_extra.push_back(o.teacher);
    }

    std::string log_path = o.log;
    if (log_path.empty()) {
        if (const char* env = std::getenv("RKDA_LOG")) log_path = env;
    }
    if (log_path.empty()) log_path = o.ckpt + ".telemetry.jsonl";

    json config = rkdea::detail::config_echo(cfg, gi);
    config["data"] = o.data;
    config["ckpt"] = o.ckpt;
    config["teacher"] = o.teacher;
    config["log"] = log_path;
    config["preset"] = o.preset;
    config["train_fraction"] = o.train_fraction;
    config["split_rng"] = o.split_rng;
    config["threads"] = cfg.threads;
    write_text_file(o.ckpt + ".manifest.json",
                    manifest_json("train", config, dataset_digest(o.data, digest_extra),
                                  cfg.rng_seed)
                            .dump(2) +
                        "\n");

    std::ofstream log_out(log_path, std::ios::binary);
    if (!log_out) throw rkdea::InputError("cannot write telemetry log " + log_path);
    rkdea::TelemetrySink sink = [&log_out](const std::string& line) { log_out << line << "\n"; };

    const rkdea::TrainResult result =
        cfg.phase == rkdea::Phase::Teacher ? rkdea::train_teacher(bundle, cfg, sink)
                                           : rkdea::train_student(bundle, teacher, cfg, sink);
    log_out.flush();
    rkdea::save_checkpoint(result.checkpoint, o.ckpt);
    if (result.diverged) {
        std::cerr << "training diverged at epoch " << result.completed_epochs
                  << "; wrote the last finite checkpoint to " << o.ckpt << "\n";
        return 3;
    }
    std::cout << "wrote " << o.ckpt << " (" << rkdea::phase_name(cfg.phase) << ", "
              << result.completed_epochs << " epochs, final total " << result.final_loss.total
              << ")\n";
    return 0;
}

struct EvalOpts {
    std::string ckpt;
    std::string data;
    std::string k_spec = "1,10";
    std::string direction = "kg1";
    std::string csv;
    bool widen_pool = false;
    double train_fraction = 0.3;
    std::uint64_t split_rng = 0;
    int threads = 1;
};

template <typename T>
std::vector<rkdea::RankingMetrics> eval_with(const rkdea::Checkpoint& ck,
                                             const rkdea::DatasetBundle& bundle,
                                             const EvalOpts& o,
                                             const std::vector<std::size_t>& ks) {
    const rkdea::GlobalIndex gi(bundle);
    rkdea::EncoderParams<T> params = rkdea::encoder_params_from_checkpoint<T>(ck);
    if (params.nodes() != gi.total_entities())
        throw rkdea::ShapeError("checkpoint covers " + std::to_string(params.nodes()) +
                                " nodes but the dataset has " +
                                std::to_string(gi.total_entities()));
    const rkdea::SparseMatrix<T> a = rkdea::build_joint_adjacency<T>(bundle.kg1, bundle.kg2);
    rkdea::DenseMatrix<T> emb = rkdea::encode_values(params, a, o.threads);
    if (ck.config.value("normalize_emb", false)) rkdea::detail::normalize_rows(emb);

    std::vector<rkdea::Direction> dirs;
    if (o.direction == "kg1" || o.direction == "both") dirs.push_back(rkdea::Direction::Kg1ToKg2);
    if (o.direction == "kg2" || o.direction == "both") dirs.push_back(rkdea::Direction::Kg2ToKg1);

    std::vector<rkdea::RankingMetrics> out;
    for (rkdea::Direction dir : dirs) {
        const auto ranks = rkdea::rank_alignments(emb, bundle.test_seeds, gi, dir, o.widen_pool);
        out.push_back(rkdea::compute_metrics(ranks, ks, dir));
    }
    return out;
}

int run_eval(const EvalOpts& o) {
    const std::vector<std::size_t> ks = parse_k_list(o.k_spec);
    const rkdea::Checkpoint ck = rkdea::load_checkpoint(o.ckpt);
    const rkdea::DatasetBundle bundle =
        rkdea::load_dataset_dir(o.data, o.train_fraction, o.split_rng);

    const std::vector<rkdea::RankingMetrics> metrics =
        ck.require("X").dtype == "f32" ? eval_with<float>(ck, bundle, o, ks)
                                       : eval_with<double>(ck, bundle, o, ks);
    for (const auto& m : metrics) std::cout << rkdea::metrics_json(m).dump() << "\n";

    if (!o.csv.empty()) {
        const bool fresh = !fs::exists(o.csv) || fs::file_size(o.csv) == 0;
        std::ofstream out(o.csv, std::ios::binary | std::ios::app);
        if (!out) throw rkdea::InputError("cannot write csv " + o.csv);
        if (fresh) {
            out << "direction";
            for (std::size_t k : ks) out << ",hits@" << k;
            out << ",mrr,n\n";
        }
        for (const auto& m : metrics) {
            out << rkdea::direction_name(m.direction);
            for (std::size_t k : ks) out << "," << m.hits.at(k);
            out << "," << m.mrr << "," << m.num_queries << "\n";
        }
    }
    return 0;
}

int run_selfcheck(const std::string& only, bool inject_bug) {
    const auto results = rkdea::run_selfchecks(only, inject_bug);
    if (results.empty()) {
        std::cerr << "no self-check matches '" << only << "'\n";
        return 2;
    }
    std::size_t failed = 0;
    for (const auto& r : results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        if (!r.passed) ++failed;
    }
    std::cout << results.size() - failed << " passed, " << failed << " failed\n";
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entity alignment by relation-aware knowledge distillation"};
    app.set_version_flag("--version", rkdea::kVersionString);
    app.set_config("--config", "", "key = value file supplying defaults (flags win)");
    app.require_subcommand(1);

    int threads = 1;
    bool deterministic = false;
    app.add_option("--threads", threads, "worker threads for the parallel sections")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic,
                 "single-threaded bitwise-reproducible mode");

    GenOpts gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic aligned graph pair");
    gen_cmd->fallthrough();
    gen_cmd->add_option("out", gen.out, "output dataset directory")->required();
    gen_cmd->add_option("--entities", gen.spec.n_entities, "entities per graph");
    gen_cmd->add_option("--relations", gen.spec.n_relations, "relations per graph");
    gen_cmd->add_option("--triples", gen.spec.n_triples, "triples per graph before dropout");
    gen_cmd->add_option("--seed-fraction", gen.spec.seed_fraction,
                        "fraction of true pairs exposed as reference alignments");
    gen_cmd->add_option("--train-fraction", gen.spec.train_fraction,
                        "fraction of reference pairs used for training");
    gen_cmd->add_option("--edge-dropout", gen.spec.edge_dropout,
                        "fraction of non-backbone KG2 triples dropped");
    gen_cmd->add_option("--feature-noise", gen.spec.feature_noise,
                        "noise added to KG1 feature rows");
    gen_cmd->add_option("--feature-dim", gen.spec.feature_dim, "feature width");
    gen_cmd->add_option("--rng", gen.spec.rng_seed, "generation seed");
    gen_cmd->add_flag("--force", gen.force, "overwrite a non-empty output directory");

    TrainOpts tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train the teacher or the student phase");
    train_cmd->fallthrough();
    train_cmd->add_option("--data", tr.data, "dataset directory")->required();
    train_cmd->add_option("--phase", tr.phase, "teacher or student")
        ->required()
        ->check(CLI::IsMember({"teacher", "student"}));
    train_cmd->add_option("--ckpt", tr.ckpt, "checkpoint output path")->required();
    train_cmd->add_option("--teacher", tr.teacher, "teacher checkpoint (student phase)");
    train_cmd->add_option("--epochs", tr.cfg.epochs, "training epochs");
    CLI::Option* lr_opt = train_cmd->add_option("--lr", tr.lr, "learning rate (phase default)");
    train_cmd->add_option("--gamma1", tr.cfg.gamma1, "translation margin");
    train_cmd->add_option("--gamma2", tr.cfg.gamma2, "consensus margin");
    CLI::Option* k1_opt = train_cmd->add_option("--k1", tr.cfg.k1, "negatives per triple");
    CLI::Option* k2_opt = train_cmd->add_option("--k2", tr.cfg.k2, "mined negatives per seed");
    CLI::Option* refresh_opt =
        train_cmd->add_option("--refresh", tr.cfg.refresh_interval, "negative refresh interval");
    train_cmd->add_option("--dim", tr.cfg.dim, "embedding width");
    train_cmd->add_option("--layers", tr.cfg.layer_count, "encoder layers");
    train_cmd->add_flag("--no-distill", tr.no_distill, "train the student without distillation");
    CLI::Option* beta_opt = train_cmd->add_option(
        "--fixed-beta", tr.fixed_beta, "use a constant mixing weight instead of the adaptive one");
    train_cmd->add_option("--kd-batch", tr.cfg.kd_batch,
                          "triples distilled per epoch (0 = all)");
    train_cmd->add_option("--rng", tr.cfg.rng_seed, "training seed");
    train_cmd->add_option("--precision", tr.cfg.precision, "32 or 64 bit scalars")
        ->check(CLI::IsMember({32, 64}));
    train_cmd->add_option("--eval-every", tr.cfg.eval_every,
                          "log test Hits@1 every N epochs (0 = off)");
    train_cmd->add_flag("--init-from-teacher", tr.cfg.init_from_teacher,
                        "start the student from the teacher's weights");
    train_cmd->add_flag("--freeze-features", tr.cfg.freeze_features,
                        "keep the input features fixed during training");
    train_cmd->add_flag("--normalize-emb", tr.cfg.normalize_emb,
                        "unit-normalize embedding rows inside the losses");
    train_cmd->add_option("--train-fraction", tr.train_fraction,
                          "fraction of reference pairs used for training");
    train_cmd->add_option("--split-rng", tr.split_rng, "seed for the train/test split");
    train_cmd->add_option("--preset", tr.preset, "dbp15k or dwy100k sampling preset")
        ->check(CLI::IsMember({"dbp15k", "dwy100k"}));
    train_cmd->add_option("--log", tr.log, "telemetry path (overrides RKDA_LOG)");

    EvalOpts ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "rank test alignments from a checkpoint");
    eval_cmd->fallthrough();
    eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--data", ev.data, "dataset directory")->required();
    eval_cmd->add_option("--k", ev.k_spec, "comma-separated Hits@k cutoffs");
    eval_cmd->add_option("--direction", ev.direction, "kg1, kg2, or both")
        ->check(CLI::IsMember({"kg1", "kg2", "both"}));
    eval_cmd->add_flag("--widen-pool", ev.widen_pool,
                       "rank against the whole counterpart graph, not just test entities");
    eval_cmd->add_option("--csv", ev.csv, "append metric rows to this csv file");
    eval_cmd->add_option("--train-fraction", ev.train_fraction,
                         "fraction of reference pairs used for training");
    eval_cmd->add_option("--split-rng", ev.split_rng, "seed for the train/test split");

    std::string only;
    bool inject_bug = false;
    CLI::App* check_cmd = app.add_subcommand("selfcheck", "run the built-in consistency checks");
    check_cmd->fallthrough();
    check_cmd->add_option("--only", only, "run only checks whose name contains this substring");
    check_cmd->add_flag("--inject-bug", inject_bug)->group("");  // negative-control fixture

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    if (deterministic) threads = 1;
    tr.cfg.threads = threads;
    ev.threads = threads;
    tr.lr_given = lr_opt->count() > 0;
    tr.k1_given = k1_opt->count() > 0;
    tr.k2_given = k2_opt->count() > 0;
    tr.refresh_given = refresh_opt->count() > 0;
    tr.fixed_beta_given = beta_opt->count() > 0;

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (train_cmd->parsed()) return run_train(tr);
        if (eval_cmd->parsed()) return run_eval(ev);
        if (check_cmd->parsed()) return run_selfcheck(only, inject_bug);
    } catch (const rkdea::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const rkdea::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
