/* traceprune — train a character-level transformer while tracking a
 * recency-weighted running average of every parameter, prune by a
 * sigma-scaled threshold on the tracked magnitudes, fine-tune under the
 * mask, and sweep compression levels against validation loss.
 *
 * C API of the shared library. All entry points return tp_status; on any
 * non-TP_OK result tp_last_error() holds a one-line diagnostic for the
 * calling thread. Handles are opaque and single-threaded: one tp_run must
 * not be used from two threads at once (distinct runs are independent).
 */
#ifndef TRACEPRUNE_H
#define TRACEPRUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TP_API __declspec(dllexport)
#else
#define TP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tp_status {
    TP_OK = 0,
    TP_ERR_INVALID_ARGUMENT = 1,
    TP_ERR_IO = 2,
    TP_ERR_FORMAT = 3,   /* malformed checkpoint/container */
    TP_ERR_STATE = 4,    /* call not valid in the current run state */
    TP_ERR_DIVERGED = 5, /* non-finite loss during training */
    TP_ERR_INTERNAL = 6
} tp_status;

TP_API const char* tp_version(void);
/* Last failure message of the calling thread; empty string if none. */
TP_API const char* tp_last_error(void);

/* Thread cap for tensor kernels (also settable via TRACEPRUNE_THREADS). */
TP_API void tp_set_threads(int n);
TP_API int tp_get_threads(void);

typedef struct tp_model_config {
    int32_t embed_dim;
    int32_t n_heads;
    int32_t n_blocks;
    int32_t ffn_dim;
    int32_t context_len;
    double dropout;
    uint64_t seed;
} tp_model_config;

typedef struct tp_train_config {
    int64_t steps;
    int32_t batch_size;
    double learn_rate;
    double beta1;
    double beta2;
    double weight_decay;
    int64_t eval_interval;
    int64_t finetune_steps;
    uint64_t seed;
} tp_train_config;

/* Paper-scale defaults: embed 384, 6 heads, 6 blocks, ffn 1536, context 256;
 * 5000 steps, batch 64, lr 3e-4, betas 0.9/0.99, 50 fine-tune steps. */
TP_API void tp_model_config_default(tp_model_config* cfg);
TP_API void tp_train_config_default(tp_train_config* cfg);
/* CI-speed preset: embed 128, 4 heads, 4 blocks, ffn 512, context 64. */
TP_API void tp_model_config_tiny(tp_model_config* cfg);

/* One training/pruning workflow bound to a corpus file. */
typedef struct tp_run tp_run;

/* Fresh run: reads the UTF-8 corpus, builds the vocabulary and the model. */
TP_API tp_status tp_run_create(const char* corpus_path, const tp_model_config* mcfg,
                               const tp_train_config* tcfg, tp_run** out);
/* Resume from a checkpoint; the corpus must be the file the checkpoint was
 * trained on (verified by content hash). */
TP_API tp_status tp_run_open(const char* checkpoint_path, const char* corpus_path,
                             tp_run** out);
TP_API void tp_run_free(tp_run* run);

/* `steps` optimizer steps: Step-I training with tracker updates while no
 * mask is installed, masked fine-tuning afterwards. */
TP_API tp_status tp_run_train(tp_run* run, int64_t steps);

/* Deterministic validation loss over the held-out split. */
TP_API tp_status tp_run_eval(tp_run* run, double* out_val_loss);

/* Install a prune mask from the tracked weights: by compression target
 * (quantile threshold) or by prune rate (sigma-scaled threshold; per-layer
 * sigma optional). Zeroes masked weights and resets optimizer moments. */
TP_API tp_status tp_run_prune_target(tp_run* run, double target);
TP_API tp_status tp_run_prune_rate(tp_run* run, double rate, int per_layer_sigma);

/* Masked fine-tuning; requires an installed mask. */
TP_API tp_status tp_run_finetune(tp_run* run, int64_t steps);

typedef struct tp_sweep_row {
    double target_compression;
    double achieved_compression;
    double prune_rate;
    double val_loss;
    double baseline_val_loss;
} tp_sweep_row;

/* One shared trained state, one independent prune + fine-tune per target.
 * A baseline row (compression 0) is always included, so `rows` must hold
 * n_targets + 1 entries; *out_rows receives the actual count. csv_path may
 * be NULL to skip the CSV artifact. jobs > 1 runs targets concurrently. */
TP_API tp_status tp_run_sweep(tp_run* run, const double* targets, size_t n_targets, int jobs,
                              const char* csv_path, tp_sweep_row* rows, size_t rows_cap,
                              size_t* out_rows);

TP_API tp_status tp_run_save(tp_run* run, const char* path);
TP_API tp_status tp_run_write_loss_log(tp_run* run, const char* path);
/* Trajectories of the sampled weights: CSV weight_id,epoch,value. */
TP_API tp_status tp_run_write_traces(tp_run* run, const char* path);

/* Resolved configuration, corpus fingerprint and state summary as a JSON
 * string; free with tp_string_free. Used to build run manifests. */
TP_API tp_status tp_run_info_json(tp_run* run, char** out_json);
/* Per-tensor shape/count table plus totals; free with tp_string_free. */
TP_API tp_status tp_run_param_table(tp_run* run, char** out_table);
TP_API void tp_string_free(char* s);

TP_API int64_t tp_run_step(tp_run* run);
TP_API int64_t tp_run_param_count(tp_run* run);
TP_API int32_t tp_run_vocab_size(tp_run* run);
/* Achieved compression of the installed mask; 0 when unpruned. */
TP_API double tp_run_compression(tp_run* run);
/* Overrides the stored fine-tune length (used by sweep). */
TP_API tp_status tp_run_set_finetune_steps(tp_run* run, int64_t steps);

#ifdef __cplusplus
}
#endif

#endif /* TRACEPRUNE_H */
