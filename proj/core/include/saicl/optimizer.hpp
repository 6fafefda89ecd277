#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "saicl/autodiff.hpp"
#include "saicl/encoder.hpp"
#include "saicl/tensor.hpp"

namespace saicl {

// Rectified Adam update for one array. step is 1-based. Decoupled weight
// decay shrinks the parameter by (1 - lr*wd) before the moment update; while
// the variance rectification term rho_t stays <= 4 the update falls back to
// plain bias-corrected momentum.
void radam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, int64_t step, double lr,
                  double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

class RAdam {
public:
    RAdam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update to every parameter that received a gradient this
    // step. Throws "nan_grad" (with the parameter name) on non-finite grads.
    void step(ParamStore& store, const std::map<std::string, Var>& leaves);

    int64_t step_count() const { return step_count_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

} // namespace saicl
