#include "mira/optim.hpp"

#include <cmath>

namespace mira {

void adamw_step(Tensor& param, const Tensor& grad, OptimizerState& state) {
    check_shape(param.same_shape(grad), "adamw_step param/grad shape mismatch");
    check_shape(param.same_shape(state.first_moment) && param.same_shape(state.second_moment),
                "adamw_step moment tensors must match parameter shape");
    if (!grad.all_finite()) throw numeric_error("adamw_step received a non-finite gradient");

    const AdamWConfig& c = state.cfg;
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);

    Tensor& m = state.first_moment;
    Tensor& v = state.second_moment;
    for (std::int64_t i = 0; i < param.size(); ++i) {
        param[i] -= c.learning_rate * c.weight_decay * param[i];  // decoupled decay
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
    }
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    states_.reserve(params_.size());
    for (Parameter* p : params_) states_.emplace_back(p->value.rows(), p->value.cols(), cfg_);
}

void AdamW::step() {
    ++step_count_;
    for (size_t i = 0; i < params_.size(); ++i) {
        adamw_step(params_[i]->value, params_[i]->grad, states_[i]);
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace mira
