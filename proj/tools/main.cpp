// Command-line front end: corpus -> train -> prune -> sweep -> reports.
// Links only the public C API (traceprune.h).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "traceprune.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void die(const std::string& message) {
    std::fprintf(stderr, "traceprune: %s\n", message.c_str());
    std::exit(1);
}

void check(tp_status status) {
    if (status != TP_OK) die(tp_last_error());
}

struct RunHandle {
    tp_run* run = nullptr;
    ~RunHandle() { tp_run_free(run); }
};

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

// Shared model/train flag block. The --tiny preset applies first; explicit
// dimension flags override it.
struct ConfigFlags {
    tp_model_config model{};
    tp_train_config train{};
    bool tiny = false;
    CLI::Option* embed_opt = nullptr;
    CLI::Option* heads_opt = nullptr;
    CLI::Option* blocks_opt = nullptr;
    CLI::Option* ffn_opt = nullptr;
    CLI::Option* ctx_opt = nullptr;

    void attach(CLI::App* cmd) {
        tp_model_config_default(&model);
        tp_train_config_default(&train);
        cmd->add_flag("--tiny", tiny, "CI-speed preset (embed 128, heads 4, blocks 4, ctx 64)");
        embed_opt = cmd->add_option("--embed", model.embed_dim, "embedding size");
        heads_opt = cmd->add_option("--heads", model.n_heads, "attention heads");
        blocks_opt = cmd->add_option("--blocks", model.n_blocks, "transformer blocks");
        ffn_opt = cmd->add_option("--ffn", model.ffn_dim, "feed-forward hidden size");
        ctx_opt = cmd->add_option("--ctx", model.context_len, "context length");
        cmd->add_option("--seed", train.seed, "run seed");
        cmd->add_option("--steps", train.steps, "optimizer steps");
        cmd->add_option("--batch", train.batch_size, "batch size");
        cmd->add_option("--lr", train.learn_rate, "learning rate");
        cmd->add_option("--eval-interval", train.eval_interval, "loss-log cadence");
        cmd->add_option("--finetune-steps", train.finetune_steps,
                        "masked fine-tune steps after pruning");
    }

    void resolve() {
        if (tiny) {
            tp_model_config preset{};
            tp_model_config_tiny(&preset);
            if (!*embed_opt) model.embed_dim = preset.embed_dim;
            if (!*heads_opt) model.n_heads = preset.n_heads;
            if (!*blocks_opt) model.n_blocks = preset.n_blocks;
            if (!*ffn_opt) model.ffn_dim = preset.ffn_dim;
            if (!*ctx_opt) model.context_len = preset.context_len;
        }
        model.seed = train.seed;
    }
};

void write_manifest(tp_run* run, const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& argv) {
    char* info = nullptr;
    check(tp_run_info_json(run, &info));
    json manifest;
    manifest["tool"] = "traceprune";
    manifest["version"] = tp_version();
    manifest["command"] = command;
    manifest["argv"] = argv;
    manifest["created"] = iso_now();
    manifest["run"] = json::parse(info);
    tp_string_free(info);
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) die("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

fs::path ensure_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) die("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

void print_sweep_table(const tp_sweep_row* rows, size_t n) {
    std::printf("target  achieved  prune_rate  val_loss  baseline\n");
    for (size_t i = 0; i < n; ++i) {
        std::printf("%6.3f  %8.4f  %10.4f  %8.4f  %8.4f\n", rows[i].target_compression,
                    rows[i].achieved_compression, rows[i].prune_rate, rows[i].val_loss,
                    rows[i].baseline_val_loss);
    }
}

std::vector<double> parse_levels(const std::string& spec) {
    std::vector<double> levels;
    std::string part;
    std::stringstream ss(spec);
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        try {
            size_t used = 0;
            levels.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            die("bad --levels entry: " + part);
        }
    }
    if (levels.empty()) die("--levels is empty");
    return levels;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"traceprune: trajectory-tracked transformer pruning"};
    app.require_subcommand(1);
    const std::vector<std::string> full_argv(argv, argv + argc);

    auto* train_cmd = app.add_subcommand("train", "Step-I training with weight tracking");
    std::string train_corpus, train_out;
    ConfigFlags train_cfg;
    train_cmd->add_option("--corpus", train_corpus, "UTF-8 corpus file")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cfg.attach(train_cmd);

    auto* sweep_cmd = app.add_subcommand("sweep", "compression sweep from a trained checkpoint");
    std::string sweep_from, sweep_corpus, sweep_out = ".", sweep_levels = "0,0.3,0.6,0.8,0.94";
    long long sweep_finetune = -1;
    int sweep_jobs = 1;
    sweep_cmd->add_option("--from", sweep_from, "trained checkpoint")->required();
    sweep_cmd->add_option("--corpus", sweep_corpus, "corpus the checkpoint was trained on")
        ->required();
    sweep_cmd->add_option("--levels", sweep_levels, "comma-separated compression targets");
    sweep_cmd->add_option("--finetune-steps", sweep_finetune, "override fine-tune steps");
    sweep_cmd->add_option("--jobs", sweep_jobs, "parallel workers");
    sweep_cmd->add_option("--out", sweep_out, "output directory for sweep.csv + manifest");

    auto* prune_cmd = app.add_subcommand("prune", "prune + masked fine-tune from a checkpoint");
    std::string prune_from, prune_corpus, prune_out;
    double prune_target = -1.0, prune_rate_flag = -1.0;
    long long prune_finetune = -1;
    bool per_layer_sigma = false;
    prune_cmd->add_option("--from", prune_from, "trained checkpoint")->required();
    prune_cmd->add_option("--corpus", prune_corpus, "corpus the checkpoint was trained on")
        ->required();
    prune_cmd->add_option("--out", prune_out, "output directory")->required();
    prune_cmd->add_option("--target", prune_target, "compression target in [0,1)");
    prune_cmd->add_option("--rate", prune_rate_flag, "prune rate (sigma multiplier)");
    prune_cmd->add_option("--finetune-steps", prune_finetune, "override fine-tune steps");
    prune_cmd->add_flag("--per-layer-sigma", per_layer_sigma,
                        "one sigma threshold per tensor (rate pathway)");

    auto* eval_cmd = app.add_subcommand("eval", "validation loss of a checkpoint");
    std::string eval_from, eval_corpus;
    eval_cmd->add_option("--from", eval_from, "checkpoint")->required();
    eval_cmd->add_option("--corpus", eval_corpus, "corpus the checkpoint was trained on")
        ->required();

    auto* trace_cmd = app.add_subcommand("trace", "train while exporting weight trajectories");
    std::string trace_corpus, trace_out;
    ConfigFlags trace_cfg;
    trace_cmd->add_option("--corpus", trace_corpus, "UTF-8 corpus file")->required();
    trace_cmd->add_option("--out", trace_out, "output directory")->required();
    trace_cfg.attach(trace_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (train_cmd->parsed()) {
        train_cfg.resolve();
        RunHandle h;
        check(tp_run_create(train_corpus.c_str(), &train_cfg.model, &train_cfg.train, &h.run));
        const fs::path dir = ensure_out_dir(train_out);
        write_manifest(h.run, dir, "train", full_argv);
        char* table = nullptr;
        check(tp_run_param_table(h.run, &table));
        std::printf("parameters (vocab %d):\n%s", tp_run_vocab_size(h.run), table);
        tp_string_free(table);
        check(tp_run_train(h.run, train_cfg.train.steps));
        check(tp_run_save(h.run, (dir / "ckpt.tpck").string().c_str()));
        check(tp_run_write_loss_log(h.run, (dir / "loss_log.csv").string().c_str()));
        double val = 0;
        check(tp_run_eval(h.run, &val));
        std::printf("trained %lld steps, val loss %.6f\n",
                    static_cast<long long>(tp_run_step(h.run)), val);
        std::printf("wrote %s\n", (dir / "ckpt.tpck").string().c_str());
        return 0;
    }

    if (sweep_cmd->parsed()) {
        RunHandle h;
        check(tp_run_open(sweep_from.c_str(), sweep_corpus.c_str(), &h.run));
        if (sweep_finetune >= 0) check(tp_run_set_finetune_steps(h.run, sweep_finetune));
        const std::vector<double> levels = parse_levels(sweep_levels);
        const fs::path dir = ensure_out_dir(sweep_out);
        write_manifest(h.run, dir, "sweep", full_argv);
        std::vector<tp_sweep_row> rows(levels.size() + 1);
        size_t n_rows = 0;
        check(tp_run_sweep(h.run, levels.data(), levels.size(), sweep_jobs,
                           (dir / "sweep.csv").string().c_str(), rows.data(), rows.size(),
                           &n_rows));
        print_sweep_table(rows.data(), n_rows);
        std::printf("wrote %s\n", (dir / "sweep.csv").string().c_str());
        return 0;
    }

    if (prune_cmd->parsed()) {
        const bool by_target = prune_target >= 0.0;
        const bool by_rate = prune_rate_flag >= 0.0;
        if (by_target == by_rate) die("pass exactly one of --target or --rate");
        RunHandle h;
        check(tp_run_open(prune_from.c_str(), prune_corpus.c_str(), &h.run));
        if (prune_finetune >= 0) check(tp_run_set_finetune_steps(h.run, prune_finetune));
        const fs::path dir = ensure_out_dir(prune_out);
        write_manifest(h.run, dir, "prune", full_argv);
        if (by_target) {
            check(tp_run_prune_target(h.run, prune_target));
        } else {
            check(tp_run_prune_rate(h.run, prune_rate_flag, per_layer_sigma ? 1 : 0));
        }
        long long finetune = prune_finetune;
        if (finetune < 0) {
            char* info = nullptr;
            check(tp_run_info_json(h.run, &info));
            finetune = json::parse(info)["train_config"]["finetune_steps"].get<long long>();
            tp_string_free(info);
        }
        check(tp_run_finetune(h.run, finetune));
        check(tp_run_save(h.run, (dir / "ckpt.tpck").string().c_str()));
        double val = 0;
        check(tp_run_eval(h.run, &val));
        std::printf("achieved compression %.4f, val loss %.6f\n", tp_run_compression(h.run), val);
        std::printf("wrote %s\n", (dir / "ckpt.tpck").string().c_str());
        return 0;
    }

    if (eval_cmd->parsed()) {
        RunHandle h;
        check(tp_run_open(eval_from.c_str(), eval_corpus.c_str(), &h.run));
        double val = 0;
        check(tp_run_eval(h.run, &val));
        std::printf("step %lld, params %lld, compression %.4f, val loss %.6f\n",
                    static_cast<long long>(tp_run_step(h.run)),
                    static_cast<long long>(tp_run_param_count(h.run)),
                    tp_run_compression(h.run), val);
        return 0;
    }

    if (trace_cmd->parsed()) {
        trace_cfg.resolve();
        RunHandle h;
        check(tp_run_create(trace_corpus.c_str(), &trace_cfg.model, &trace_cfg.train, &h.run));
        const fs::path dir = ensure_out_dir(trace_out);
        write_manifest(h.run, dir, "trace", full_argv);
        check(tp_run_train(h.run, trace_cfg.train.steps));
        check(tp_run_write_traces(h.run, (dir / "traces.csv").string().c_str()));
        check(tp_run_write_loss_log(h.run, (dir / "loss_log.csv").string().c_str()));
        std::printf("wrote %s\n", (dir / "traces.csv").string().c_str());
        return 0;
    }

    return 2;
}
