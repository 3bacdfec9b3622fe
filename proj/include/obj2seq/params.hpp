#pragma once

#include <string>
#include <vector>

#include "obj2seq/tensor.hpp"

namespace obj2seq {

// Ordered collection of named trainable tensors. Registration order is the
// construction order of the model, which makes initialization, optimizer
// state and checkpoints reproducible.
template <class T>
class ParamRegistry {
public:
    TensorT<T> add(const std::string& name, std::vector<int> shape, Rng& rng, T init_scale) {
        auto t = TensorT<T>::zeros(shape, true);
        if (init_scale != T(0))
            for (auto& v : t.mutable_values()) v = T(rng.normal()) * init_scale;
        insert(name, t);
        return t;
    }

    // uniform Xavier/Glorot for a [fan_in x fan_out] matrix
    TensorT<T> add_xavier(const std::string& name, int fan_in, int fan_out, Rng& rng) {
        auto t = TensorT<T>::zeros({fan_in, fan_out}, true);
        T bound = std::sqrt(T(6) / T(fan_in + fan_out));
        for (auto& v : t.mutable_values()) v = T(rng.unif(-1.0f, 1.0f)) * bound;
        insert(name, t);
        return t;
    }

    TensorT<T> add_zeros(const std::string& name, std::vector<int> shape) {
        auto t = TensorT<T>::zeros(shape, true);
        insert(name, t);
        return t;
    }

    TensorT<T> add_ones(const std::string& name, std::vector<int> shape) {
        auto t = TensorT<T>::filled(shape, T(1), true);
        insert(name, t);
        return t;
    }

    const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }

    TensorT<T> find(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw ContractError("parameter '" + name + "' not registered");
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    void insert(const std::string& name, const TensorT<T>& t) {
        for (const auto& [n, existing] : items_)
            if (n == name) throw ContractError("duplicate parameter name '" + name + "'");
        items_.emplace_back(name, t);
    }

    std::vector<std::pair<std::string, TensorT<T>>> items_;
};

}  // namespace obj2seq
