#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "model.hpp"
#include "optim.hpp"
#include "pruner.hpp"
#include "tracker.hpp"
#include "vocab.hpp"

namespace traceprune {

struct TrainConfig {
    int64_t steps = 5000;
    int32_t batch_size = 64;
    double learn_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    int64_t eval_interval = 250;
    int64_t finetune_steps = 50;
    double split = 0.9;       // leading fraction of the corpus used for training
    int64_t trace_samples = 64;
    uint64_t seed = 0;

    void validate() const;
};

// FNV-1a over a byte buffer; corpus and config fingerprints in reports.
uint64_t fnv1a64(const void* data, size_t size);

struct CorpusData {
    std::string path;
    uint64_t hash = 0;
    Vocab vocab;
    std::vector<int32_t> train_ids;
    std::vector<int32_t> val_ids;
};

// Reads a UTF-8 text file and splits it contiguously: the first `split`
// fraction of characters trains, the remainder validates.
CorpusData load_corpus(const std::string& path, double split);

struct LossLogRow {
    int64_t step;
    double train_loss;  // mean batch loss over the last eval window
    double val_loss;
};

struct SweepRow {
    double target = 0.0;
    double achieved = 0.0;
    double prune_rate = 0.0;
    double val_loss = 0.0;
    double baseline_val_loss = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // sorted by target; baseline row first
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    uint64_t corpus_hash = 0;

    std::string table() const;
    std::string csv() const;
    void write_csv(const std::string& path) const;
};

// Mean of losses[step-window .. step) — the smoothed training-loss trend.
double smoothed_loss(std::span<const double> losses, int64_t step, int64_t window);

// One training/pruning workflow over a fixed corpus: model + optimizer +
// weight tracker (+ prune mask once Step II starts). Batch sampling derives
// from (seed, step) alone, so a run resumed from a checkpoint continues
// bitwise identically to an uninterrupted one.
class Run {
  public:
    static Run create(const std::string& corpus_path, const ModelConfig& mcfg,
                      const TrainConfig& tcfg);
    static Run load(const std::string& checkpoint_path, const std::string& corpus_path);
    // In-memory restore against an already-loaded corpus (sweep snapshots).
    static Run load(std::istream& in, CorpusData corpus);

    // `n` optimizer steps. While no mask is installed this is Step-I training
    // and updates the tracker after every step; with a mask installed the
    // same loop runs as masked fine-tuning (gradients zeroed at pruned
    // positions, tracker frozen).
    void train(int64_t n);

    // Deterministic full-coverage validation loss: token-weighted mean
    // cross-entropy over non-overlapping context windows of the val split.
    double eval() const;

    // Loss of the batch the sampler would draw at the current step, without
    // touching any state.
    double current_batch_loss() const;

    // Step II entry points: score the tracked weights, install a mask, zero
    // the masked positions and reset optimizer moments.
    void prune_target(double target);
    void prune_rate(double rate, bool per_layer_sigma = false);

    // Masked fine-tuning (requires an installed mask).
    void finetune(int64_t n);

    // One shared Step-I state, one independent prune+finetune per target,
    // each restored from an in-memory snapshot of this run. Always includes
    // the compression-0 baseline row. jobs > 1 runs targets on worker threads.
    SweepReport sweep(std::vector<double> targets, int jobs,
                      const std::string& csv_path = "");

    void save(const std::string& path) const;
    void save(std::ostream& out) const;

    void write_loss_log(const std::string& path) const;
    void write_traces(const std::string& path) const;

    // Resolved configuration + corpus fingerprint + state summary as JSON;
    // the CLI embeds this in run manifests.
    std::string info_json() const;

    // Fine-tune length may be overridden after loading a checkpoint.
    void set_finetune_steps(int64_t n);

    const ModelConfig& model_config() const { return mcfg_; }
    const TrainConfig& train_config() const { return tcfg_; }
    const CorpusData& corpus() const { return corpus_; }
    ParamStore& model() { return model_; }
    const ParamStore& model() const { return model_; }
    TrackerState& tracker() { return tracker_; }
    const TrackerState& tracker() const { return tracker_; }
    const std::optional<PruneMask>& mask() const { return mask_; }
    int64_t step() const { return step_; }
    double baseline_val_loss() const { return baseline_val_loss_; }
    const std::vector<LossLogRow>& loss_log() const { return loss_log_; }
    const std::vector<double>& step_losses() const { return step_losses_; }
    const AdamW& optimizer() const { return opt_; }

  private:
    Run() = default;

    void install_mask(PruneMask mask);
    void sample_batch(int64_t step, std::vector<int32_t>& xs, std::vector<int32_t>& ys) const;
    double train_step();

    ModelConfig mcfg_;
    TrainConfig tcfg_;
    CorpusData corpus_;
    ParamStore model_;
    AdamW opt_;
    TrackerState tracker_;
    std::optional<PruneMask> mask_;
    TraceSampler traces_;
    int64_t step_ = 0;
    double baseline_val_loss_ = 0.0;
    bool baseline_recorded_ = false;
    std::vector<LossLogRow> loss_log_;
    std::vector<double> step_losses_;
};

// Greedy sampler for smoke tests: extends `prompt` by `count` characters,
// always taking the argmax token.
std::string greedy_generate(const Run& run, std::string_view prompt, int64_t count);

}  // namespace traceprune
