#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "model.hpp"

namespace traceprune {

// Shadow copy of the model holding a recency-weighted running average of
// every parameter. After n updates each shadow entry equals
//   sum_{e=1..n} e * p_e / sum_{e=1..n} e
// maintained incrementally:
//   q_new = (q_old * S_prev + p * (n+1)) / S,
// with S_prev the weight sum through step n and S through step n+1. The
// buffers are f64 so the closed form holds to ~1e-15 relative regardless of
// run length; only this shadow is kept, not per-step history.
class TrackerState {
  public:
    struct Shadow {
        std::string name;
        Shape shape;
        std::vector<double> value;
    };

    TrackerState() = default;
    explicit TrackerState(const ParamStore& model);  // zero shadow, step 0

    int64_t step() const { return step_; }
    // sum of epoch weights 1..step
    double weight_sum() const { return 0.5 * static_cast<double>(step_) * (step_ + 1); }

    const std::vector<Shadow>& shadows() const { return shadows_; }
    std::vector<Shadow>& shadows() { return shadows_; }

    // One Eq-style weighted-average step with the model's current values;
    // called once per optimizer step.
    void update(const ParamStore& model);

    // Restore from checkpoint buffers.
    void restore(std::vector<Shadow> shadows, int64_t step);

  private:
    void check_alignment(const ParamStore& model) const;

    std::vector<Shadow> shadows_;
    int64_t step_ = 0;
};

// Per-parameter magnitude scores |shadow|, flattened over the prunable
// entries in store order.
struct ImportanceVector {
    std::vector<double> scores;
    std::vector<std::string> names;   // prunable entry names, store order
    std::vector<int64_t> offsets;     // start of each entry in `scores`
    std::vector<Shape> shapes;

    int64_t size() const { return static_cast<int64_t>(scores.size()); }
};

ImportanceVector importance_scores(const TrackerState& tracker, const ParamStore& model);

// Weighted importance of one parameter from its full per-epoch value log:
//   sum_{L=0..k} val[n-L] * (n-L) / sum_{L=0..k} (n-L)
// history[0] is the epoch-1 value; k is the lookback horizon (k = n-1 covers
// the whole run and matches the running tracker).
double importance_from_history(std::span<const double> history, int64_t n, int64_t k);

// Full per-step value log for a small sampled subset of weights, kept for
// trajectory export; the tracker itself stays O(P).
class TraceSampler {
  public:
    TraceSampler() = default;
    // Samples `count` positions uniformly over prunable parameters.
    TraceSampler(const ParamStore& model, int64_t count, uint64_t seed);

    void record(const ParamStore& model, int64_t step);

    bool empty() const { return picks_.empty(); }
    int64_t logged_steps() const { return steps_; }

    // CSV rows: weight_id,epoch,value. Values round-trip bit-exactly.
    void write_csv(const std::string& path) const;

  private:
    struct Pick {
        size_t entry;
        int64_t flat;
        std::string id;
    };
    std::vector<Pick> picks_;
    std::vector<std::vector<real>> history_;  // per pick, one value per step
    int64_t steps_ = 0;
};

}  // namespace traceprune
