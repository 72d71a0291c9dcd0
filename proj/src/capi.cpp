#include "traceprune.h"

#include <cstring>
#include <new>
#include <string>

#include "harness.hpp"

using namespace traceprune;

struct tp_run {
    Run run;
};

namespace {

thread_local std::string t_last_error;

tp_status status_code(Status s) {
    switch (s) {
        case Status::Ok: return TP_OK;
        case Status::InvalidArgument: return TP_ERR_INVALID_ARGUMENT;
        case Status::Io: return TP_ERR_IO;
        case Status::Format: return TP_ERR_FORMAT;
        case Status::State: return TP_ERR_STATE;
        case Status::Diverged: return TP_ERR_DIVERGED;
        case Status::Internal: return TP_ERR_INTERNAL;
    }
    return TP_ERR_INTERNAL;
}

template <typename Fn>
tp_status guarded(Fn&& fn) {
    try {
        fn();
        t_last_error.clear();
        return TP_OK;
    } catch (const Error& e) {
        t_last_error = e.what();
        return status_code(e.status());
    } catch (const std::bad_alloc&) {
        t_last_error = "out of memory";
        return TP_ERR_INTERNAL;
    } catch (const std::exception& e) {
        t_last_error = e.what();
        return TP_ERR_INTERNAL;
    }
}

tp_status require(bool ok, const char* message) {
    if (ok) return TP_OK;
    t_last_error = message;
    return TP_ERR_INVALID_ARGUMENT;
}

ModelConfig to_model_config(const tp_model_config& c) {
    ModelConfig m;
    m.embed_dim = c.embed_dim;
    m.n_heads = c.n_heads;
    m.n_blocks = c.n_blocks;
    m.ffn_dim = c.ffn_dim;
    m.context_len = c.context_len;
    m.dropout = c.dropout;
    m.seed = c.seed;
    return m;
}

TrainConfig to_train_config(const tp_train_config& c) {
    TrainConfig t;
    t.steps = c.steps;
    t.batch_size = c.batch_size;
    t.learn_rate = c.learn_rate;
    t.beta1 = c.beta1;
    t.beta2 = c.beta2;
    t.weight_decay = c.weight_decay;
    t.eval_interval = c.eval_interval;
    t.finetune_steps = c.finetune_steps;
    t.seed = c.seed;
    return t;
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

extern "C" {

const char* tp_version(void) { return TRACEPRUNE_VERSION; }

const char* tp_last_error(void) { return t_last_error.c_str(); }

void tp_set_threads(int n) { set_engine_threads(n); }

int tp_get_threads(void) { return engine_threads(); }

void tp_model_config_default(tp_model_config* cfg) {
    if (!cfg) return;
    ModelConfig m;
    *cfg = {m.embed_dim, m.n_heads, m.n_blocks, m.ffn_dim, m.context_len, m.dropout, m.seed};
}

void tp_model_config_tiny(tp_model_config* cfg) {
    if (!cfg) return;
    ModelConfig m = tiny_model_config();
    *cfg = {m.embed_dim, m.n_heads, m.n_blocks, m.ffn_dim, m.context_len, m.dropout, m.seed};
}

void tp_train_config_default(tp_train_config* cfg) {
    if (!cfg) return;
    TrainConfig t;
    *cfg = {t.steps,         t.batch_size,     t.learn_rate, t.beta1, t.beta2,
            t.weight_decay,  t.eval_interval,  t.finetune_steps, t.seed};
}

tp_status tp_run_create(const char* corpus_path, const tp_model_config* mcfg,
                        const tp_train_config* tcfg, tp_run** out) {
    if (tp_status s = require(corpus_path && mcfg && tcfg && out, "null argument")) return s;
    *out = nullptr;
    return guarded([&] {
        *out = new tp_run{Run::create(corpus_path, to_model_config(*mcfg), to_train_config(*tcfg))};
    });
}

tp_status tp_run_open(const char* checkpoint_path, const char* corpus_path, tp_run** out) {
    if (tp_status s = require(checkpoint_path && corpus_path && out, "null argument")) return s;
    *out = nullptr;
    return guarded([&] { *out = new tp_run{Run::load(checkpoint_path, corpus_path)}; });
}

void tp_run_free(tp_run* run) { delete run; }

tp_status tp_run_train(tp_run* run, int64_t steps) {
    if (tp_status s = require(run != nullptr, "null run handle")) return s;
    return guarded([&] { run->run.train(steps); });
}

tp_status tp_run_eval(tp_run* run, double* out_val_loss) {
    if (tp_status s = require(run && out_val_loss, "null argument")) return s;
    return guarded([&] { *out_val_loss = run->run.eval(); });
}

tp_status tp_run_prune_target(tp_run* run, double target) {
    if (tp_status s = require(run != nullptr, "null run handle")) return s;
    return guarded([&] { run->run.prune_target(target); });
}

tp_status tp_run_prune_rate(tp_run* run, double rate, int per_layer_sigma) {
    if (tp_status s = require(run != nullptr, "null run handle")) return s;
    return guarded([&] { run->run.prune_rate(rate, per_layer_sigma != 0); });
}

tp_status tp_run_finetune(tp_run* run, int64_t steps) {
    if (tp_status s = require(run != nullptr, "null run handle")) return s;
    return guarded([&] { run->run.finetune(steps); });
}

tp_status tp_run_sweep(tp_run* run, const double* targets, size_t n_targets, int jobs,
                       const char* csv_path, tp_sweep_row* rows, size_t rows_cap,
                       size_t* out_rows) {
    if (tp_status s = require(run && (targets || n_targets == 0) && rows && out_rows,
                              "null argument")) {
        return s;
    }
    return guarded([&] {
        SweepReport report = run->run.sweep(std::vector<double>(targets, targets + n_targets),
                                            jobs, csv_path ? csv_path : "");
        if (report.rows.size() > rows_cap) {
            fail(Status::InvalidArgument,
                 "sweep: rows buffer holds " + std::to_string(rows_cap) + ", need " +
                     std::to_string(report.rows.size()));
        }
        for (size_t i = 0; i < report.rows.size(); ++i) {
            rows[i] = {report.rows[i].target, report.rows[i].achieved, report.rows[i].prune_rate,
                       report.rows[i].val_loss, report.rows[i].baseline_val_loss};
        }
        *out_rows = report.rows.size();
    });
}

tp_status tp_run_save(tp_run* run, const char* path) {
    if (tp_status s = require(run && path, "null argument")) return s;
    return guarded([&] { run->run.save(path); });
}

tp_status tp_run_write_loss_log(tp_run* run, const char* path) {
    if (tp_status s = require(run && path, "null argument")) return s;
    return guarded([&] { run->run.write_loss_log(path); });
}

tp_status tp_run_write_traces(tp_run* run, const char* path) {
    if (tp_status s = require(run && path, "null argument")) return s;
    return guarded([&] { run->run.write_traces(path); });
}

tp_status tp_run_info_json(tp_run* run, char** out_json) {
    if (tp_status s = require(run && out_json, "null argument")) return s;
    return guarded([&] { *out_json = dup_string(run->run.info_json()); });
}

tp_status tp_run_param_table(tp_run* run, char** out_table) {
    if (tp_status s = require(run && out_table, "null argument")) return s;
    return guarded([&] { *out_table = dup_string(run->run.model().breakdown_table()); });
}

void tp_string_free(char* s) { delete[] s; }

int64_t tp_run_step(tp_run* run) { return run ? run->run.step() : -1; }

int64_t tp_run_param_count(tp_run* run) { return run ? run->run.model().param_count() : -1; }

int32_t tp_run_vocab_size(tp_run* run) { return run ? run->run.corpus().vocab.size() : -1; }

double tp_run_compression(tp_run* run) {
    if (!run || !run->run.mask()) return 0.0;
    return run->run.mask()->achieved_compression;
}

tp_status tp_run_set_finetune_steps(tp_run* run, int64_t steps) {
    if (tp_status s = require(run != nullptr, "null run handle")) return s;
    return guarded([&] { run->run.set_finetune_steps(steps); });
}

}  // extern "C"
