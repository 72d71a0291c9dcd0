#include "optim.hpp"

#include <cmath>

namespace traceprune {

AdamW::AdamW(const AdamConfig& cfg, const ParamStore& model) : cfg_(cfg) {
    if (cfg.learn_rate <= 0.0 || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 ||
        cfg.beta2 >= 1.0 || cfg.eps <= 0.0 || cfg.weight_decay < 0.0) {
        fail(Status::InvalidArgument, "adamw: invalid hyperparameters");
    }
    m_.reserve(model.size());
    v_.reserve(model.size());
    for (const auto& e : model.entries()) {
        m_.emplace_back(static_cast<size_t>(e.tensor.numel()), real(0));
        v_.emplace_back(static_cast<size_t>(e.tensor.numel()), real(0));
    }
}

void AdamW::step(ParamStore& model) {
    if (m_.size() != model.size()) {
        fail(Status::InvalidArgument, "adamw: optimizer state does not match the model");
    }
    ++t_;
    const real b1 = static_cast<real>(cfg_.beta1);
    const real b2 = static_cast<real>(cfg_.beta2);
    const real lr = static_cast<real>(cfg_.learn_rate);
    const real eps = static_cast<real>(cfg_.eps);
    const real wd = static_cast<real>(cfg_.weight_decay);
    const real c1 = static_cast<real>(1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_))));
    const real c2 = static_cast<real>(1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))));
    for (size_t i = 0; i < model.size(); ++i) {
        Tensor& p = model.entries()[i].tensor;
        if (!p.has_grad()) continue;
        std::span<const real> g = static_cast<const Tensor&>(p).grad();
        std::span<real> data = p.data();
        real* m = m_[i].data();
        real* v = v_[i].data();
        for (size_t j = 0; j < data.size(); ++j) {
            m[j] = b1 * m[j] + (real(1) - b1) * g[j];
            v[j] = b2 * v[j] + (real(1) - b2) * g[j] * g[j];
            const real mhat = m[j] * c1;
            const real vhat = v[j] * c2;
            data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * data[j]);
        }
    }
}

void AdamW::restore(std::vector<std::vector<real>> m, std::vector<std::vector<real>> v,
                    int64_t t) {
    if (m.size() != v.size() || t < 0) fail(Status::Format, "adamw: bad restored state");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

}  // namespace traceprune
