#include "tracker.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>

namespace traceprune {

TrackerState::TrackerState(const ParamStore& model) {
    shadows_.reserve(model.size());
    for (const auto& e : model.entries()) {
        Shadow s;
        s.name = e.name;
        s.shape = e.tensor.shape();
        s.value.assign(static_cast<size_t>(e.tensor.numel()), 0.0);
        shadows_.push_back(std::move(s));
    }
}

void TrackerState::check_alignment(const ParamStore& model) const {
    if (model.size() != shadows_.size()) {
        fail(Status::InvalidArgument, "tracker: model has " + std::to_string(model.size()) +
                                          " tensors, shadow has " +
                                          std::to_string(shadows_.size()));
    }
    for (size_t i = 0; i < shadows_.size(); ++i) {
        const auto& e = model.entries()[i];
        if (e.name != shadows_[i].name || e.tensor.shape() != shadows_[i].shape) {
            fail(Status::InvalidArgument,
                 "tracker: entry " + std::to_string(i) + " misaligned: model " + e.name + " " +
                     shape_str(e.tensor.shape()) + " vs shadow " + shadows_[i].name + " " +
                     shape_str(shadows_[i].shape));
        }
    }
}

void TrackerState::update(const ParamStore& model) {
    check_alignment(model);
    const double n = static_cast<double>(step_);
    const double s_prev = weight_sum();        // sum 1..n
    const double s = s_prev + (n + 1.0);       // sum 1..n+1
    const double w_new = (n + 1.0) / s;
    const double w_old = s_prev / s;
    for (size_t i = 0; i < shadows_.size(); ++i) {
        std::span<const real> p = model.entries()[i].tensor.data();
        std::vector<double>& q = shadows_[i].value;
        for (size_t j = 0; j < q.size(); ++j) {
            q[j] = q[j] * w_old + static_cast<double>(p[j]) * w_new;
        }
    }
    ++step_;
}

void TrackerState::restore(std::vector<Shadow> shadows, int64_t step) {
    if (step < 0) fail(Status::Format, "tracker: negative step count");
    shadows_ = std::move(shadows);
    step_ = step;
}

ImportanceVector importance_scores(const TrackerState& tracker, const ParamStore& model) {
    if (tracker.step() == 0) {
        fail(Status::State, "importance: tracker holds no updates yet (step 0)");
    }
    ImportanceVector out;
    const auto& shadows = tracker.shadows();
    if (shadows.size() != model.size()) {
        fail(Status::InvalidArgument, "importance: tracker/model tensor count mismatch");
    }
    for (size_t i = 0; i < shadows.size(); ++i) {
        if (!model.entries()[i].prunable) continue;
        out.names.push_back(shadows[i].name);
        out.shapes.push_back(shadows[i].shape);
        out.offsets.push_back(static_cast<int64_t>(out.scores.size()));
        for (double v : shadows[i].value) out.scores.push_back(std::abs(v));
    }
    return out;
}

double importance_from_history(std::span<const double> history, int64_t n, int64_t k) {
    if (n < 1 || static_cast<int64_t>(history.size()) < n) {
        fail(Status::InvalidArgument, "importance: history shorter than n");
    }
    if (k < 0 || k >= n) {
        fail(Status::InvalidArgument, "importance: horizon k = " + std::to_string(k) +
                                          " must satisfy 0 <= k <= n-1 with n = " +
                                          std::to_string(n));
    }
    double num = 0.0, den = 0.0;
    for (int64_t l = 0; l <= k; ++l) {
        const double w = static_cast<double>(n - l);
        num += history[n - l - 1] * w;
        den += w;
    }
    return num / den;
}

// ----------------------------- trace sampling -----------------------------

TraceSampler::TraceSampler(const ParamStore& model, int64_t count, uint64_t seed) {
    std::vector<size_t> prunable;
    int64_t total = 0;
    for (size_t i = 0; i < model.size(); ++i) {
        if (model.entries()[i].prunable) {
            prunable.push_back(i);
            total += model.entries()[i].tensor.numel();
        }
    }
    if (total == 0 || count <= 0) return;
    SplitMix64 rng(mix_seed(seed, 0x7a5e));
    count = std::min<int64_t>(count, total);
    for (int64_t c = 0; c < count; ++c) {
        int64_t flat = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
        for (size_t i : prunable) {
            const int64_t n = model.entries()[i].tensor.numel();
            if (flat < n) {
                Pick p;
                p.entry = i;
                p.flat = flat;
                p.id = model.entries()[i].name + ":" + std::to_string(flat);
                picks_.push_back(std::move(p));
                break;
            }
            flat -= n;
        }
    }
    history_.resize(picks_.size());
}

void TraceSampler::record(const ParamStore& model, int64_t step) {
    (void)step;
    for (size_t i = 0; i < picks_.size(); ++i) {
        history_[i].push_back(model.entries()[picks_[i].entry].tensor.data()[picks_[i].flat]);
    }
    if (!picks_.empty()) ++steps_;
}

void TraceSampler::write_csv(const std::string& path) const {
    if (picks_.empty() || steps_ < 2) {
        fail(Status::State, "trace export: need at least one sampled weight with two logged epochs");
    }
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(Status::Io, "trace export: cannot open " + path);
    std::fprintf(f, "weight_id,epoch,value\n");
    for (size_t i = 0; i < picks_.size(); ++i) {
        for (int64_t e = 0; e < steps_; ++e) {
            // %.9g reproduces any f32 exactly on re-parse
            std::fprintf(f, "%s,%" PRId64 ",%.9g\n", picks_[i].id.c_str(), e + 1,
                         static_cast<double>(history_[i][e]));
        }
    }
    if (std::fclose(f) != 0) fail(Status::Io, "trace export: write failed for " + path);
}

}  // namespace traceprune
