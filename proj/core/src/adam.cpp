#include "quietroom/adam.hpp"

#include <cmath>

#include "quietroom/error.hpp"

namespace quietroom {

Adam::Adam(const Parameters& like, AdamConfig config) : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {
    if (!(config.lr > 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0) ||
        !(config.eps > 0.0))
        throw ConfigError("adam: invalid hyperparameters");
}

void Adam::step(Parameters& params, const Parameters& grads) {
    if (!params.same_layout(m_) || !grads.same_layout(m_)) throw ConfigError("adam: parameter/gradient layout mismatch");
    ++step_;
    const auto& c = config_;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto m = m_[i].array();
        auto v = v_[i].array();
        const auto g = grads[i].array();
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.square();
        params[i].array() -= c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
    }
}

}  // namespace quietroom
