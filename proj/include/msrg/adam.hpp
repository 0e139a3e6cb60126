#pragma once

#include <cstdint>
#include <vector>

#include "msrg/tensor.hpp"

namespace msrg {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Moments are float32 like the parameters; the
// per-element update is evaluated in float64 before rounding back.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Applies one step in place. Parameter order and shapes must stay fixed
    // across calls; moment slots are allocated on the first step.
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace msrg
