#include "msrg/adam.hpp"

#include <cmath>

#include "msrg/errors.hpp"

namespace msrg {

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
        throw DimensionError("adam: parameter/gradient count mismatch");
    }
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape());
            v_.emplace_back(p->shape());
        }
    }
    if (m_.size() != params.size()) {
        throw DimensionError("adam: parameter count changed between steps");
    }

    t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        ensure_same_shape(p, g, "adam");
        ensure_same_shape(p, m_[i], "adam state");
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
            const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = static_cast<float>(static_cast<double>(p[j]) -
                                      cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        ensure_finite(p, "adam update");
    }
}

}  // namespace msrg
