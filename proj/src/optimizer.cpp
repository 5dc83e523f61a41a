#include "mvcl/optimizer.hpp"

#include <cmath>

#include "mvcl/errors.hpp"

namespace mvcl {

void AdamW::step(Params& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, param] : params) {
        Tensor& w = param->value;
        auto& slot = state_[name];
        if (slot.m.size() != w.size()) {
            slot.m = Tensor::zeros(w.shape());
            slot.v = Tensor::zeros(w.shape());
        }
        const bool has_grad = param->grad.size() == w.size();
        if (has_grad && !param->grad.all_finite()) {
            throw NumericError("adamw: non-finite gradient for parameter '" + name + "'");
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            // decay is decoupled: applied to the weight, not the gradient
            w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
            const double g = has_grad ? param->grad[i] : 0.0;
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace mvcl
