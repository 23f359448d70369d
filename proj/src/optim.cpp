#include "focta/optim.hpp"

#include <cmath>

namespace focta {

void Adam::step(ParamStore& store, const GradMap& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [idx, g] : grads) {
        Parameter& p = store.params.at(static_cast<size_t>(idx));
        if (!p.trainable)
            throw graph_error("optimizer step received a gradient for frozen parameter " + p.name);
        auto mit = m_.find(idx);
        if (mit == m_.end()) {
            mit = m_.emplace(idx, Tensor(p.value.shape)).first;
            v_.emplace(idx, Tensor(p.value.shape));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(idx);
        for (int64_t i = 0; i < g.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p.value[i] = quantize(store.width,
                                  p.value[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
        }
    }
}

int64_t Adam::state_bytes(const ParamStore& store) const {
    int64_t n = 0;
    for (const auto& [idx, m] : m_) {
        (void)idx;
        n += 2 * m.size();
    }
    return n * width_bytes(store.width);
}

}  // namespace focta
