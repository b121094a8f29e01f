#pragma once

#include <cstdint>

#include "quietroom/params.hpp"

namespace quietroom {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments share the parameter layout.
class Adam {
public:
    Adam(const Parameters& like, AdamConfig config = {});

    const AdamConfig& config() const { return config_; }
    std::uint64_t steps() const { return step_; }
    const Parameters& first_moment() const { return m_; }
    const Parameters& second_moment() const { return v_; }

    /// Throws ConfigError on layout mismatch.
    void step(Parameters& params, const Parameters& grads);

private:
    AdamConfig config_;
    Parameters m_, v_;
    std::uint64_t step_ = 0;
};

}  // namespace quietroom
