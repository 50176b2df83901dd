#pragma once

#include "ccl/common.hpp"

#include <cmath>

namespace ccl::nn {

// Adaptive moment estimation with bias correction.
template <typename S>
class Adam {
public:
    explicit Adam(Eigen::Index n, S lr = S(1e-3), S beta1 = S(0.9), S beta2 = S(0.999),
                  S eps = S(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.setZero(n);
        v_.setZero(n);
    }

    void step(VecX<S>& params, const VecX<S>& grad) {
        require(params.size() == m_.size() && grad.size() == m_.size(), "Adam: size mismatch");
        ++t_;
        m_ = beta1_ * m_ + (S(1) - beta1_) * grad;
        v_ = beta2_ * v_ + (S(1) - beta2_) * grad.cwiseProduct(grad);
        const S bc1 = S(1) - std::pow(beta1_, S(t_));
        const S bc2 = S(1) - std::pow(beta2_, S(t_));
        params.array() -=
            lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
    }

    void reset() {
        m_.setZero();
        v_.setZero();
        t_ = 0;
    }

    S learning_rate() const { return lr_; }
    void set_learning_rate(S lr) { lr_ = lr; }

private:
    S lr_, beta1_, beta2_, eps_;
    VecX<S> m_, v_;
    long t_ = 0;
};

}  // namespace ccl::nn
