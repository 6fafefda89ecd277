#include "saicl/optimizer.hpp"

#include <cmath>

#include "saicl/error.hpp"

namespace saicl {

void radam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step, double lr,
                  double weight_decay, double beta1, double beta2, double eps) {
    const double t = static_cast<double>(step);
    const double beta1_t = std::pow(beta1, t);
    const double beta2_t = std::pow(beta2, t);
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);

    if (weight_decay > 0.0) param.scale_(1.0 - lr * weight_decay);

    const bool rectified = rho_t > 4.0;
    double r_t = 1.0;
    if (rectified)
        r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                        ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

    for (int64_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double m_hat = m[i] / (1.0 - beta1_t);
        if (rectified) {
            const double v_hat = std::sqrt(v[i] / (1.0 - beta2_t));
            param[i] -= lr * r_t * m_hat / (v_hat + eps);
        } else {
            param[i] -= lr * m_hat;
        }
    }
}

void RAdam::step(ParamStore& store, const std::map<std::string, Var>& leaves) {
    ++step_count_;
    for (const auto& [name, leaf] : leaves) {
        if (!leaf->requires_grad || leaf->grad.empty()) continue;
        if (!leaf->grad.all_finite()) throw Error("nan_grad", "non-finite gradient for " + name);
        auto [it, inserted] = moments_.try_emplace(name, std::pair<Tensor, Tensor>{});
        if (inserted) {
            it->second.first = Tensor::zeros(leaf->grad.shape());
            it->second.second = Tensor::zeros(leaf->grad.shape());
        }
        radam_update(store.param(name), leaf->grad, it->second.first, it->second.second,
                     step_count_, lr_, weight_decay_, beta1_, beta2_, eps_);
    }
}

} // namespace saicl
