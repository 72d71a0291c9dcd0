// Contract tests for the CLI binary (path provided via TRACEPRUNE_CLI):
// exit codes, produced artifacts, manifest reproducibility.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "testutil.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli() {
    const char* env = std::getenv("TRACEPRUNE_CLI");
    REQUIRE_MESSAGE(env != nullptr, "TRACEPRUNE_CLI must point at the binary");
    return env;
}

struct CmdResult {
    int exit_code;
    std::string out;
    std::string err;
};

CmdResult run_cmd(const std::string& args) {
    static int counter = 0;
    const fs::path dir = tptest::test_dir("cli_io");
    const fs::path out_file = dir / ("out" + std::to_string(counter) + ".txt");
    const fs::path err_file = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    const std::string cmd =
        cli() + " " + args + " >" + out_file.string() + " 2>" + err_file.string();
    const int raw = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = tptest::read_file(out_file);
    r.err = tptest::read_file(err_file);
    return r;
}

std::string corpus_path() {
    static std::string path = tptest::write_corpus_file("cli", 60000).string();
    return path;
}

const std::string kMicroFlags =
    " --embed 16 --heads 2 --blocks 1 --ffn 64 --ctx 8 --batch 8 --eval-interval 10";

json load_json(const fs::path& p) { return json::parse(tptest::read_file(p)); }

}  // namespace

TEST_CASE("train writes checkpoint, loss log and manifest, exit 0") {
    const fs::path out = tptest::test_dir("cli_train");
    CmdResult r = run_cmd("train --corpus " + corpus_path() + " --steps 30 --out " +
                          out.string() + kMicroFlags);
    CAPTURE(r.err);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "ckpt.tpck"));
    CHECK(fs::exists(out / "loss_log.csv"));
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(r.out.find("val loss") != std::string::npos);
    CHECK(r.out.find("tok_emb") != std::string::npos);  // parameter breakdown printed
    json manifest = load_json(out / "manifest.json");
    CHECK(manifest["command"] == "train");
    CHECK(manifest["run"]["corpus"]["vocab_size"] == 65);
}

TEST_CASE("unknown flags exit 2 with a diagnostic") {
    CmdResult r = run_cmd("train --corpus x --out y --no-such-flag");
    CHECK(r.exit_code == 2);
    CHECK(!r.err.empty());
    CmdResult r2 = run_cmd("frobnicate");
    CHECK(r2.exit_code == 2);
}

TEST_CASE("runtime failures exit 1 with a single-line diagnostic") {
    const fs::path out = tptest::test_dir("cli_fail");
    CmdResult r = run_cmd("train --corpus /nonexistent.txt --steps 1 --out " + out.string());
    CHECK(r.exit_code == 1);
    CHECK(r.err.rfind("traceprune: ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("prune then eval reports the targeted compression") {
    const fs::path base = tptest::test_dir("cli_prune_base");
    CmdResult train = run_cmd("train --corpus " + corpus_path() + " --steps 40 --out " +
                              base.string() + kMicroFlags);
    REQUIRE(train.exit_code == 0);

    const fs::path pruned = tptest::test_dir("cli_pruned");
    CmdResult prune = run_cmd("prune --from " + (base / "ckpt.tpck").string() + " --corpus " +
                              corpus_path() + " --target 0.6 --finetune-steps 5 --out " +
                              pruned.string());
    CAPTURE(prune.err);
    REQUIRE(prune.exit_code == 0);
    CHECK(prune.out.find("achieved compression") != std::string::npos);

    CmdResult eval = run_cmd("eval --from " + (pruned / "ckpt.tpck").string() + " --corpus " +
                             corpus_path());
    REQUIRE(eval.exit_code == 0);
    std::smatch m;
    REQUIRE(std::regex_search(eval.out, m, std::regex("compression ([0-9.]+)")));
    const double achieved = std::stod(m[1]);
    CHECK(achieved >= 0.59);
    CHECK(achieved <= 0.61);
    REQUIRE(std::regex_search(eval.out, m, std::regex("val loss ([0-9.]+)")));
    CHECK(std::isfinite(std::stod(m[1])));
    // pruning must not touch its input checkpoint
    CmdResult eval_base =
        run_cmd("eval --from " + (base / "ckpt.tpck").string() + " --corpus " + corpus_path());
    REQUIRE(eval_base.exit_code == 0);
    CHECK(std::regex_search(eval_base.out, m, std::regex("compression 0.0000")));
}

TEST_CASE("rate-based pruning accepts the per-layer-sigma flag") {
    const fs::path base = tptest::test_dir("cli_rate_base");
    CmdResult train = run_cmd("train --corpus " + corpus_path() + " --steps 30 --out " +
                              base.string() + kMicroFlags);
    REQUIRE(train.exit_code == 0);
    const fs::path out = tptest::test_dir("cli_rate");
    CmdResult prune = run_cmd("prune --from " + (base / "ckpt.tpck").string() + " --corpus " +
                              corpus_path() +
                              " --rate 0.8 --per-layer-sigma --finetune-steps 3 --out " +
                              out.string());
    CAPTURE(prune.err);
    REQUIRE(prune.exit_code == 0);
    CHECK(prune.out.find("achieved compression") != std::string::npos);
    // both pathways given at once is a usage-level failure
    CmdResult both = run_cmd("prune --from " + (base / "ckpt.tpck").string() + " --corpus " +
                             corpus_path() + " --target 0.5 --rate 1.0 --out " + out.string());
    CHECK(both.exit_code == 1);
}

TEST_CASE("sweep emits one CSV row per level plus the baseline") {
    const fs::path base = tptest::test_dir("cli_sweep_base");
    CmdResult train = run_cmd("train --corpus " + corpus_path() + " --steps 40 --out " +
                              base.string() + kMicroFlags);
    REQUIRE(train.exit_code == 0);

    const fs::path out = tptest::test_dir("cli_sweep");
    CmdResult sweep = run_cmd("sweep --from " + (base / "ckpt.tpck").string() + " --corpus " +
                              corpus_path() + " --levels 0,0.3,0.6,0.8,0.94 --finetune-steps 5" +
                              " --out " + out.string());
    CAPTURE(sweep.err);
    REQUIRE(sweep.exit_code == 0);
    CHECK(sweep.out.find("target  achieved") != std::string::npos);  // table on stdout
    std::ifstream csv(out / "sweep.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "target_compression,achieved_compression,prune_rate,val_loss,baseline_val_loss");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 5);
}

TEST_CASE("trace emits weight trajectories") {
    const fs::path out = tptest::test_dir("cli_trace");
    CmdResult r = run_cmd("trace --corpus " + corpus_path() + " --steps 12 --out " + out.string() +
                          kMicroFlags);
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    std::ifstream csv(out / "traces.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "weight_id,epoch,value");
    int rows = 0;
    std::string line;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 64 * 12);  // default sample count x steps
}

TEST_CASE("manifests are reproducible up to timestamps") {
    const fs::path a = tptest::test_dir("cli_manifest_a");
    const fs::path b = tptest::test_dir("cli_manifest_b");
    const std::string flags =
        "train --corpus " + corpus_path() + " --steps 5 " + kMicroFlags + " --out ";
    REQUIRE(run_cmd(flags + a.string()).exit_code == 0);
    REQUIRE(run_cmd(flags + b.string()).exit_code == 0);
    json ma = load_json(a / "manifest.json");
    json mb = load_json(b / "manifest.json");
    ma.erase("created");
    mb.erase("created");
    // output paths differ by construction; drop argv's final element
    ma["argv"].erase(ma["argv"].size() - 1);
    mb["argv"].erase(mb["argv"].size() - 1);
    CHECK(ma == mb);
}

TEST_CASE("identical seeded runs produce byte-identical artifacts") {
    const fs::path a = tptest::test_dir("cli_det_a");
    const fs::path b = tptest::test_dir("cli_det_b");
    const std::string flags = "train --corpus " + corpus_path() +
                              " --steps 25 --seed 42 " + kMicroFlags + " --out ";
    REQUIRE(run_cmd(flags + a.string()).exit_code == 0);
    REQUIRE(run_cmd(flags + b.string()).exit_code == 0);
    CHECK(tptest::read_file(a / "loss_log.csv") == tptest::read_file(b / "loss_log.csv"));
    CHECK(tptest::read_file(a / "ckpt.tpck") == tptest::read_file(b / "ckpt.tpck"));
}
