#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cswin/params.hpp"

namespace cswin {

// AdamW with decoupled weight decay.
template <class T>
class AdamW {
  public:
    explicit AdamW(ParamStore<T>& ps, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8, double weight_decay = 1e-2)
        : ps_(ps), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
        m_.resize(ps.size());
        v_.resize(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) {
            m_[i].assign(static_cast<size_t>(ps.at(i).numel()), T(0));
            v_[i].assign(static_cast<size_t>(ps.at(i).numel()), T(0));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < ps_.size(); ++i) {
            Tensor<T> p = ps_.at(i);
            auto& data = p.data();
            auto& grad = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < data.size(); ++j) {
                double g = static_cast<double>(grad[j]);
                double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * g;
                double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * g * g;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_) + wd_ * static_cast<double>(data[j]);
                data[j] = static_cast<T>(static_cast<double>(data[j]) - lr_ * update);
            }
        }
    }

  private:
    ParamStore<T>& ps_;
    double lr_, beta1_, beta2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// Linear warmup followed by cosine annealing to zero; `step` counts from 0.
inline double warmup_cosine_lr(double base_lr, int64_t step, int64_t total_steps,
                               int64_t warmup_steps) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    int64_t rest = std::max<int64_t>(1, total_steps - warmup_steps);
    double prog = static_cast<double>(step - warmup_steps) / static_cast<double>(rest);
    if (prog > 1.0) prog = 1.0;
    return 0.5 * base_lr * (1.0 + std::cos(3.14159265358979323846 * prog));
}

}  // namespace cswin
