#pragma once

#include <cstdint>
#include <vector>

#include "model.hpp"

namespace traceprune {

struct AdamConfig {
    double learn_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; off by default
};

// AdamW. Moment buffers align with the ParamStore entry order; updates are
// plain elementwise loops, so identical state and gradients give bitwise
// identical parameters.
class AdamW {
  public:
    AdamW() = default;
    AdamW(const AdamConfig& cfg, const ParamStore& model);

    const AdamConfig& config() const { return cfg_; }
    int64_t step_count() const { return t_; }

    // Applies one update from the gradients currently on the parameters.
    void step(ParamStore& model);

    // Checkpoint access: first-moment / second-moment buffers per entry.
    std::vector<std::vector<real>>& moment1() { return m_; }
    std::vector<std::vector<real>>& moment2() { return v_; }
    const std::vector<std::vector<real>>& moment1() const { return m_; }
    const std::vector<std::vector<real>>& moment2() const { return v_; }
    void restore(std::vector<std::vector<real>> m, std::vector<std::vector<real>> v, int64_t t);

  private:
    AdamConfig cfg_;
    std::vector<std::vector<real>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace traceprune
