#pragma once

#include "obj2seq/params.hpp"

namespace obj2seq {

// Adam with decoupled weight decay. Moments are kept per parameter in
// registration order; the whole state round-trips through checkpoints.
template <class T>
class AdamW {
public:
    AdamW() = default;
    AdamW(ParamRegistry<T>& params, T beta1, T beta2, T weight_decay, T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {
        for (const auto& [name, t] : params.items()) {
            tensors_.push_back(t);
            m_.emplace_back(t.size(), T(0));
            v_.emplace_back(t.size(), T(0));
        }
    }

    // returns the pre-clip global gradient norm
    double clip_global_norm(T max_norm) {
        double sq = 0;
        for (auto& t : tensors_)
            for (T g : t.grad_ref()) sq += static_cast<double>(g) * g;
        double norm = std::sqrt(sq);
        if (max_norm > T(0) && norm > static_cast<double>(max_norm)) {
            T s = static_cast<T>(static_cast<double>(max_norm) / norm);
            for (auto& t : tensors_)
                for (auto& g : t.grad_ref()) g *= s;
        }
        return norm;
    }

    void step(T lr) {
        ++t_;
        T bc1 = T(1) - std::pow(beta1_, T(t_));
        T bc2 = T(1) - std::pow(beta2_, T(t_));
        for (size_t pi = 0; pi < tensors_.size(); ++pi) {
            auto& vals = tensors_[pi].mutable_values();
            auto& grad = tensors_[pi].grad_ref();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < vals.size(); ++i) {
                T g = grad[i];
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g;
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g * g;
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                vals[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * vals[i]);
            }
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    std::vector<std::vector<T>>& moments_m() { return m_; }
    std::vector<std::vector<T>>& moments_v() { return v_; }

private:
    std::vector<TensorT<T>> tensors_;
    T beta1_ = T(0.9), beta2_ = T(0.999), wd_ = T(0), eps_ = T(1e-8);
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace obj2seq
