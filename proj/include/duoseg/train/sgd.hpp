#pragma once

#include <cmath>

#include "duoseg/model/layers.hpp"

namespace duoseg {

struct SgdConfig {
    double lr0 = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double gamma = 0.95;
    bool decay_norm_affine = true;  // when off, norm gamma/beta skip weight decay
};

// Exponential decay: lr(e) = lr0 * gamma^e.
inline double lr_at_epoch(const SgdConfig& cfg, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.gamma, epoch);
}

// SGD with momentum. Weight decay folds into the gradient before the
// momentum update:
//   v <- mu * v + (g + wd * w);  w <- w - lr * v
template <class S>
class SgdOptimizer {
public:
    SgdOptimizer(const ParamList<S>& params, const SgdConfig& cfg) : cfg_(cfg) {
        buffers_.reserve(params.size());
        for (const auto& [name, p] : params) buffers_.push_back(ArrayX<S>::Zero(p.numel()));
    }

    const SgdConfig& config() const { return cfg_; }

    void step(ParamList<S>& params, double lr) {
        if (params.size() != buffers_.size())
            throw std::invalid_argument("sgd_step: parameter list does not match optimizer state");
        const S mu = static_cast<S>(cfg_.momentum);
        const S wd = static_cast<S>(cfg_.weight_decay);
        const S eta = static_cast<S>(lr);
        auto is_norm_affine = [](const std::string& name) {
            return name.ends_with(".gamma") || name.ends_with(".beta");
        };
        for (size_t i = 0; i < params.size(); ++i) {
            auto& [name, p] = params[i];
            if (!p.has_grad())
                throw std::runtime_error("sgd_step: missing gradient for trainable parameter " + name);
            const S decay = (cfg_.decay_norm_affine || !is_norm_affine(name)) ? wd : S(0);
            ArrayX<S>& v = buffers_[i];
            v = mu * v + (p.grad() + decay * p.values());
            p.values() -= eta * v;
        }
    }

    void zero_grad(ParamList<S>& params) {
        for (auto& [name, p] : params) p.zero_grad();
    }

    std::vector<ArrayX<S>>& buffers() { return buffers_; }
    const std::vector<ArrayX<S>>& buffers() const { return buffers_; }

private:
    SgdConfig cfg_;
    std::vector<ArrayX<S>> buffers_;
};

}  // namespace duoseg
