#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tracker.hpp"

namespace traceprune {

// Per-tensor keep masks over the prunable parameters, plus the bookkeeping
// that produced them. keep[i] == 0 marks a zeroed position.
struct PruneMask {
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<uint8_t> keep;
    };

    std::vector<Entry> entries;
    double target_compression = 0.0;   // requested, when built from a target
    double achieved_compression = 0.0; // pruned / prunable, exact recount
    double threshold = 0.0;
    double prune_rate = 0.0;           // threshold / sigma equivalent

    int64_t total() const;
    int64_t pruned() const;
};

// Population (divide-by-N) standard deviation.
double population_stddev(std::span<const double> values);

// Eq-style threshold: sigma of the score vector scaled by the prune rate.
double compute_threshold(const ImportanceVector& scores, double prune_rate);

// Prunes entries with score strictly below the threshold; ties at the
// threshold are kept.
PruneMask build_mask(const ImportanceVector& scores, double threshold);

// One threshold per tensor (sigma over that tensor's scores only), for the
// per-layer ablation; otherwise identical semantics to build_mask.
PruneMask build_mask_per_tensor(const ImportanceVector& scores, double prune_rate);

// Chooses the threshold as the target quantile of the scores so the achieved
// compression lands within one-entry granularity of `target`, and reports the
// equivalent prune rate.
PruneMask mask_for_target(const ImportanceVector& scores, double target);

// Zeroes masked positions of the live model; kept entries are untouched.
void apply_mask(ParamStore& model, const PruneMask& mask);

// Zeroes gradients at masked positions, so the following optimizer step keeps
// pruned weights at exactly 0.0 (moments stay zero too with fresh state).
void mask_gradients(ParamStore& model, const PruneMask& mask);

}  // namespace traceprune
