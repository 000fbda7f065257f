#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
    if (const char* p = std::getenv("RKDEA_CLI_PATH")) return p;
#ifdef RKDEA_CLI_PATH
    return RKDEA_CLI_PATH;
#else
    FAIL("RKDEA_CLI_PATH is neither compiled in nor set in the environment");
    return {};
#endif
}

// Runs through /bin/sh and maps the wait status back to the exit code.
int run(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::current_path() / "cli_test_tmp" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Standard tiny dataset shared by the pipeline cases. Training width must
// match the generated feature width.
std::string gen_cmd(const fs::path& out, std::uint64_t seed = 3) {
    std::ostringstream os;
    os << cli_path() << " gen " << out
       << " --entities 12 --relations 2 --triples 20 --feature-dim 8"
       << " --train-fraction 0.3 --rng " << seed;
    return os.str();
}

std::string teacher_cmd(const fs::path& data, const fs::path& ckpt) {
    std::ostringstream os;
    os << cli_path() << " train --data " << data << " --phase teacher --ckpt " << ckpt
       << " --epochs 6 --dim 8 --k1 3 --k2 4 --refresh 2 --rng 1";
    return os.str();
}

std::string student_cmd(const fs::path& data, const fs::path& teacher, const fs::path& ckpt) {
    std::ostringstream os;
    os << cli_path() << " train --data " << data << " --phase student --teacher " << teacher
       << " --ckpt " << ckpt << " --epochs 4 --dim 8 --k1 3 --k2 4 --refresh 2 --rng 1";
    return os.str();
}

}  // namespace

TEST_CASE("version flag reports the library version") {
    const fs::path dir = fresh_dir("version");
    const fs::path out = dir / "out.txt";
    REQUIRE(run(cli_path() + " --version > " + out.string()) == 0);
    CHECK(slurp(out).find("1.0.0") != std::string::npos);
}

TEST_CASE("generation writes the dataset layout and a manifest") {
    const fs::path dir = fresh_dir("gen") / "data";
    REQUIRE(run(gen_cmd(dir)) == 0);

    for (const char* name : {"triples_1", "triples_2", "ref_ent_ids", "features.f32",
                             "manifest.json"}) {
        INFO(name);
        CHECK(fs::exists(dir / name));
    }

    const json manifest = json::parse(slurp(dir / "manifest.json"));
    REQUIRE(manifest.size() == 5);
    CHECK(manifest["command"] == "gen");
    CHECK(manifest["tool_version"] == "1.0.0");
    CHECK(manifest["rng_seed"].get<std::uint64_t>() == 3);
    CHECK(manifest["config"]["entities"].get<std::size_t>() == 12);
    CHECK(std::regex_match(manifest["dataset_digest"].get<std::string>(),
                           std::regex("fnv1a64:[0-9a-f]{16}")));
}

TEST_CASE("generation is reproducible across output directories") {
    const fs::path a = fresh_dir("gen_repro_a") / "data";
    const fs::path b = fresh_dir("gen_repro_b") / "data";
    REQUIRE(run(gen_cmd(a)) == 0);
    REQUIRE(run(gen_cmd(b)) == 0);
    for (const char* name : {"triples_1", "triples_2", "ref_ent_ids", "features.f32"}) {
        INFO(name);
        CHECK(slurp(a / name) == slurp(b / name));
    }
}

TEST_CASE("generation refuses bad requests and non-empty targets") {
    const fs::path dir = fresh_dir("gen_guard") / "data";
    CHECK(run(cli_path() + " gen " + dir.string() + " --entities 1 2> /dev/null") == 2);

    REQUIRE(run(gen_cmd(dir)) == 0);
    CHECK(run(gen_cmd(dir) + " 2> /dev/null") == 2);
    CHECK(run(gen_cmd(dir) + " --force") == 0);
}

TEST_CASE("the generate-train-distill-evaluate pipeline runs end to end") {
    const fs::path dir = fresh_dir("pipeline");
    const fs::path data = dir / "data";
    const fs::path teacher = dir / "teacher.ckpt";
    const fs::path student = dir / "student.ckpt";
    REQUIRE(run(gen_cmd(data)) == 0);

    REQUIRE(run(teacher_cmd(data, teacher) + " > /dev/null") == 0);
    REQUIRE(fs::exists(teacher));
    REQUIRE(fs::exists(dir / "teacher.ckpt.manifest.json"));
    const auto teacher_log = lines_of(dir / "teacher.ckpt.telemetry.jsonl");
    REQUIRE(teacher_log.size() == 6);
    for (const auto& l : teacher_log) CHECK(json::parse(l).contains("l_ke"));

    REQUIRE(run(student_cmd(data, teacher, student) + " > /dev/null") == 0);
    REQUIRE(fs::exists(student));
    const auto student_log = lines_of(dir / "student.ckpt.telemetry.jsonl");
    REQUIRE(student_log.size() == 4);
    for (const auto& l : student_log) {
        const json j = json::parse(l);
        CHECK(j.contains("l_nc"));
        CHECK(j.contains("l_kd"));
        CHECK(j.contains("beta"));
    }

    SECTION("single-direction metrics with custom cutoffs") {
        const fs::path out = dir / "eval.jsonl";
        REQUIRE(run(cli_path() + " eval --ckpt " + student.string() + " --data " + data.string() +
                    " --k 1,5,10 > " + out.string()) == 0);
        const auto rows = lines_of(out);
        REQUIRE(rows.size() == 1);
        const json m = json::parse(rows[0]);
        CHECK(m["direction"] == "kg1->kg2");
        CHECK(m.contains("hits@1"));
        CHECK(m.contains("hits@5"));
        CHECK(m.contains("hits@10"));
        CHECK(m.contains("mrr"));
        CHECK(m["n"].get<std::size_t>() == 9);  // 12 pairs, 3 train, 9 test
    }
    SECTION("both directions emit one row each") {
        const fs::path out = dir / "eval_both.jsonl";
        REQUIRE(run(cli_path() + " eval --ckpt " + student.string() + " --data " + data.string() +
                    " --direction both > " + out.string()) == 0);
        const auto rows = lines_of(out);
        REQUIRE(rows.size() == 2);
        CHECK(json::parse(rows[0])["direction"] == "kg1->kg2");
        CHECK(json::parse(rows[1])["direction"] == "kg2->kg1");
    }
    SECTION("csv accumulates rows under a single header") {
        const fs::path csv = dir / "metrics.csv";
        const std::string cmd = cli_path() + " eval --ckpt " + student.string() + " --data " +
                                data.string() + " --direction both --csv " + csv.string() +
                                " > /dev/null";
        REQUIRE(run(cmd) == 0);
        REQUIRE(run(cmd) == 0);
        const auto rows = lines_of(csv);
        REQUIRE(rows.size() == 5);  // header + 2 rows per invocation
        CHECK(rows[0] == "direction,hits@1,hits@10,mrr,n");
        CHECK(rows[1].rfind("kg1->kg2,", 0) == 0);
        CHECK(rows[2].rfind("kg2->kg1,", 0) == 0);
    }
    SECTION("widened pools rank against the whole counterpart graph") {
        const fs::path out = dir / "eval_wide.jsonl";
        REQUIRE(run(cli_path() + " eval --ckpt " + student.string() + " --data " + data.string() +
                    " --widen-pool > " + out.string()) == 0);
        REQUIRE(lines_of(out).size() == 1);
    }
}

TEST_CASE("student training requires a teacher checkpoint") {
    const fs::path dir = fresh_dir("no_teacher");
    const fs::path data = dir / "data";
    REQUIRE(run(gen_cmd(data)) == 0);
    CHECK(run(cli_path() + " train --data " + data.string() +
              " --phase student --ckpt " + (dir / "s.ckpt").string() +
              " --epochs 1 --dim 8 2> /dev/null") == 2);
}

TEST_CASE("training rejects unsupported precisions at the flag level") {
    const fs::path dir = fresh_dir("precision");
    const fs::path data = dir / "data";
    REQUIRE(run(gen_cmd(data)) == 0);
    CHECK(run(teacher_cmd(data, dir / "t.ckpt") + " --precision 16 2> /dev/null") == 2);
}

TEST_CASE("divergence exits distinctly and keeps the last finite checkpoint") {
    const fs::path dir = fresh_dir("diverge");
    const fs::path data = dir / "data";
    const fs::path ckpt = dir / "t.ckpt";
    REQUIRE(run(gen_cmd(data)) == 0);
    const fs::path err = dir / "stderr.txt";
    CHECK(run(teacher_cmd(data, ckpt) + " --precision 32 --lr 1e30 2> " + err.string()) == 3);
    CHECK(fs::exists(ckpt));
    CHECK(slurp(err).find("diverged") != std::string::npos);
}

TEST_CASE("a corrupted checkpoint fails evaluation cleanly") {
    const fs::path dir = fresh_dir("corrupt");
    const fs::path data = dir / "data";
    const fs::path ckpt = dir / "t.ckpt";
    REQUIRE(run(gen_cmd(data)) == 0);
    REQUIRE(run(teacher_cmd(data, ckpt) + " > /dev/null") == 0);

    std::string bytes = slurp(ckpt);
    bytes[0] = 'X';
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
    CHECK(run(cli_path() + " eval --ckpt " + (dir / "bad.ckpt").string() + " --data " +
              data.string() + " 2> /dev/null") == 2);
}

TEST_CASE("config files supply defaults that explicit flags override") {
    const fs::path dir = fresh_dir("config");
    const fs::path data = dir / "data";
    REQUIRE(run(gen_cmd(data)) == 0);

    const fs::path ini = dir / "run.ini";
    std::ofstream(ini) << "[train]\nepochs=2\n";

    const fs::path a = dir / "a.ckpt";
    REQUIRE(run(cli_path() + " --config " + ini.string() + " train --data " + data.string() +
                " --phase teacher --ckpt " + a.string() +
                " --dim 8 --k1 3 --k2 4 --refresh 2 > /dev/null") == 0);
    CHECK(lines_of(dir / "a.ckpt.telemetry.jsonl").size() == 2);

    const fs::path b = dir / "b.ckpt";
    REQUIRE(run(cli_path() + " --config " + ini.string() + " train --data " + data.string() +
                " --phase teacher --ckpt " + b.string() +
                " --epochs 1 --dim 8 --k1 3 --k2 4 --refresh 2 > /dev/null") == 0);
    CHECK(lines_of(dir / "b.ckpt.telemetry.jsonl").size() == 1);
}

TEST_CASE("telemetry destination resolves flag, then environment, then default") {
    const fs::path dir = fresh_dir("telemetry");
    const fs::path data = dir / "data";
    REQUIRE(run(gen_cmd(data)) == 0);

    SECTION("environment variable redirects the stream") {
        const fs::path custom = dir / "custom.jsonl";
        const fs::path ckpt = dir / "env.ckpt";
        REQUIRE(run("RKDA_LOG=" + custom.string() + " " + teacher_cmd(data, ckpt) +
                    " > /dev/null") == 0);
        CHECK(fs::exists(custom));
        CHECK_FALSE(fs::exists(dir / "env.ckpt.telemetry.jsonl"));
        CHECK(lines_of(custom).size() == 6);
    }
    SECTION("an explicit flag beats the environment") {
        const fs::path env_log = dir / "ignored.jsonl";
        const fs::path flag_log = dir / "chosen.jsonl";
        const fs::path ckpt = dir / "flag.ckpt";
        REQUIRE(run("RKDA_LOG=" + env_log.string() + " " + teacher_cmd(data, ckpt) + " --log " +
                    flag_log.string() + " > /dev/null") == 0);
        CHECK(fs::exists(flag_log));
        CHECK_FALSE(fs::exists(env_log));
    }
}

TEST_CASE("deterministic runs produce byte-identical checkpoints") {
    const fs::path dir = fresh_dir("determinism");
    const fs::path data = dir / "data";
    REQUIRE(run(gen_cmd(data)) == 0);
    const fs::path a = dir / "a.ckpt";
    const fs::path b = dir / "b.ckpt";
    REQUIRE(run(cli_path() + " --deterministic" + teacher_cmd(data, a).substr(cli_path().size()) +
                " > /dev/null") == 0);
    REQUIRE(run(cli_path() + " --deterministic" + teacher_cmd(data, b).substr(cli_path().size()) +
                " > /dev/null") == 0);
    CHECK(slurp(a) == slurp(b));
}

TEST_CASE("the self-check suite passes and catches a planted fault") {
    const fs::path dir = fresh_dir("selfcheck");
    const fs::path out = dir / "out.txt";
    REQUIRE(run(cli_path() + " selfcheck > " + out.string()) == 0);
    const std::string text = slurp(out);
    CHECK(text.find("[PASS]") != std::string::npos);
    CHECK(text.find("[FAIL]") == std::string::npos);

    const fs::path huber = dir / "huber.txt";
    REQUIRE(run(cli_path() + " selfcheck --only huber > " + huber.string()) == 0);
    const auto huber_lines = lines_of(huber);
    REQUIRE(huber_lines.size() == 2);  // one check plus the summary line
    CHECK(huber_lines[0].find("huber-contract") != std::string::npos);

    const fs::path bug = dir / "bug.txt";
    CHECK(run(cli_path() + " selfcheck --inject-bug > " + bug.string()) == 1);
    CHECK(slurp(bug).find("[FAIL]") != std::string::npos);
}
