#include "pruner.hpp"

#include <algorithm>
#include <cmath>

namespace traceprune {

int64_t PruneMask::total() const {
    int64_t n = 0;
    for (const Entry& e : entries) n += static_cast<int64_t>(e.keep.size());
    return n;
}

int64_t PruneMask::pruned() const {
    int64_t n = 0;
    for (const Entry& e : entries) {
        for (uint8_t k : e.keep) n += (k == 0);
    }
    return n;
}

double population_stddev(std::span<const double> values) {
    if (values.empty()) fail(Status::InvalidArgument, "stddev: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return std::sqrt(var);
}

double compute_threshold(const ImportanceVector& scores, double prune_rate) {
    if (scores.scores.empty()) fail(Status::InvalidArgument, "threshold: empty score vector");
    if (prune_rate < 0.0) fail(Status::InvalidArgument, "threshold: prune rate must be >= 0");
    return population_stddev(scores.scores) * prune_rate;
}

static PruneMask mask_from_thresholds(const ImportanceVector& scores,
                                      std::span<const double> per_entry_threshold,
                                      double reported_threshold, double reported_rate) {
    PruneMask mask;
    mask.threshold = reported_threshold;
    mask.prune_rate = reported_rate;
    int64_t pruned = 0;
    for (size_t e = 0; e < scores.names.size(); ++e) {
        const int64_t begin = scores.offsets[e];
        const int64_t end = e + 1 < scores.names.size()
                                ? scores.offsets[e + 1]
                                : static_cast<int64_t>(scores.scores.size());
        PruneMask::Entry entry;
        entry.name = scores.names[e];
        entry.shape = scores.shapes[e];
        entry.keep.resize(static_cast<size_t>(end - begin), 1);
        const double thr = per_entry_threshold[e];
        for (int64_t i = begin; i < end; ++i) {
            if (scores.scores[i] < thr) {  // strict: ties at the threshold stay
                entry.keep[static_cast<size_t>(i - begin)] = 0;
                ++pruned;
            }
        }
        mask.entries.push_back(std::move(entry));
    }
    const int64_t total = static_cast<int64_t>(scores.scores.size());
    mask.achieved_compression =
        total > 0 ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
    return mask;
}

PruneMask build_mask(const ImportanceVector& scores, double threshold) {
    if (threshold < 0.0) fail(Status::InvalidArgument, "mask: threshold must be >= 0");
    std::vector<double> thresholds(scores.names.size(), threshold);
    const double sigma = scores.scores.empty() ? 0.0 : population_stddev(scores.scores);
    const double rate = sigma > 0.0 ? threshold / sigma : 0.0;
    return mask_from_thresholds(scores, thresholds, threshold, rate);
}

PruneMask build_mask_per_tensor(const ImportanceVector& scores, double prune_rate) {
    if (prune_rate < 0.0) fail(Status::InvalidArgument, "mask: prune rate must be >= 0");
    std::vector<double> thresholds(scores.names.size());
    for (size_t e = 0; e < scores.names.size(); ++e) {
        const int64_t begin = scores.offsets[e];
        const int64_t end = e + 1 < scores.names.size()
                                ? scores.offsets[e + 1]
                                : static_cast<int64_t>(scores.scores.size());
        std::span<const double> part(scores.scores.data() + begin,
                                     static_cast<size_t>(end - begin));
        thresholds[e] = population_stddev(part) * prune_rate;
    }
    PruneMask mask = mask_from_thresholds(scores, thresholds, 0.0, prune_rate);
    mask.threshold = 0.0;  // no single global threshold in this variant
    return mask;
}

PruneMask mask_for_target(const ImportanceVector& scores, double target) {
    if (target < 0.0 || target >= 1.0) {
        fail(Status::InvalidArgument,
             "mask: target compression must be in [0,1), got " + std::to_string(target));
    }
    if (scores.scores.empty()) fail(Status::InvalidArgument, "mask: empty score vector");
    const int64_t total = static_cast<int64_t>(scores.scores.size());
    const int64_t want =
        std::min<int64_t>(std::llround(target * static_cast<double>(total)), total - 1);
    double threshold = 0.0;
    if (want > 0) {
        // the want-th smallest score prunes exactly the `want` entries below
        // it (up to ties, which stay because the comparison is strict)
        std::vector<double> sorted(scores.scores);
        std::nth_element(sorted.begin(), sorted.begin() + want, sorted.end());
        threshold = sorted[static_cast<size_t>(want)];
    }
    PruneMask mask = build_mask(scores, threshold);
    mask.target_compression = target;
    return mask;
}

static const PruneMask::Entry* find_entry(const PruneMask& mask, const std::string& name) {
    for (const auto& e : mask.entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

static void check_mask_alignment(const ParamStore& model, const PruneMask& mask) {
    for (const auto& e : mask.entries) {
        if (!model.has(e.name)) {
            fail(Status::InvalidArgument, "mask: model has no tensor " + e.name);
        }
        const Tensor& t = model.at(e.name);
        if (t.shape() != e.shape) {
            fail(Status::InvalidArgument, "mask: shape mismatch for " + e.name + ": model " +
                                              shape_str(t.shape()) + " vs mask " +
                                              shape_str(e.shape));
        }
    }
}

void apply_mask(ParamStore& model, const PruneMask& mask) {
    check_mask_alignment(model, mask);
    for (auto& entry : model.entries()) {
        const PruneMask::Entry* m = find_entry(mask, entry.name);
        if (!m) continue;
        std::span<real> data = entry.tensor.data();
        for (size_t i = 0; i < m->keep.size(); ++i) {
            if (!m->keep[i]) data[i] = real(0);
        }
    }
}

void mask_gradients(ParamStore& model, const PruneMask& mask) {
    check_mask_alignment(model, mask);
    for (auto& entry : model.entries()) {
        const PruneMask::Entry* m = find_entry(mask, entry.name);
        if (!m || !entry.tensor.has_grad()) continue;
        std::span<real> g = entry.tensor.grad();
        for (size_t i = 0; i < m->keep.size(); ++i) {
            if (!m->keep[i]) g[i] = real(0);
        }
    }
}

}  // namespace traceprune
