#pragma once

#include <map>

#include "focta/graph.hpp"

namespace focta {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Moments exist only for parameters that actually receive gradients, i.e.
// the trainable partition. Accumulators stay in double; the parameter
// update is rounded through the store's element width.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& store, const GradMap& grads);

    int64_t state_bytes(const ParamStore& store) const;  // 2x moment storage
    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::map<int, Tensor> m_;
    std::map<int, Tensor> v_;
    int64_t t_ = 0;
};

}  // namespace focta
