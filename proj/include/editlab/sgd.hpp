#pragma once

// SGD with momentum and selective weight decay. Decay applies only to
// parameter groups whose name contains "weight"; biases, norm shifts and
// low-rank factors are exempt by name.

#include <string>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

struct SgdConfig {
    double learning_rate = 0.0;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ContractError("SgdConfig: learning_rate must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("SgdConfig: momentum must be in [0,1)");
        if (!(weight_decay >= 0.0)) throw ContractError("SgdConfig: weight_decay must be >= 0");
    }
};

struct ParamGroup {
    std::string name;
    TensorPtr tensor;
    std::vector<double> momentum_buffer;

    ParamGroup(std::string n, TensorPtr t)
        : name(std::move(n)), tensor(std::move(t)), momentum_buffer(tensor->data.size(), 0.0) {
        tensor->requires_grad = true;
        tensor->ensure_grad();
    }

    bool weight_class() const { return name.find("weight") != std::string::npos; }
};

inline void zero_grads(std::vector<ParamGroup>& params) {
    for (auto& p : params) p.tensor->zero_grad();
}

// v <- momentum*v + g (+ decay*p for weight-class params); p <- p - lr*v.
// Momentum buffers persist across calls on the same ParamGroup objects.
inline void sgd_step(std::vector<ParamGroup>& params, const SgdConfig& cfg) {
    cfg.validate();
    for (auto& p : params) {
        if (!p.tensor->has_grad())
            throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
        const bool decayed = p.weight_class() && cfg.weight_decay > 0.0;
        auto& v = p.momentum_buffer;
        auto& w = p.tensor->data;
        const auto& g = p.tensor->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            double gi = g[i];
            if (decayed) gi += cfg.weight_decay * w[i];
            v[i] = cfg.momentum * v[i] + gi;
            w[i] -= cfg.learning_rate * v[i];
        }
    }
}

}  // namespace editlab
