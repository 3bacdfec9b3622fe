#pragma once

#include "obj2seq/params.hpp"

namespace obj2seq {

template <class T>
struct LinearLayer {
    TensorT<T> w, b;

    LinearLayer() = default;
    LinearLayer(ParamRegistry<T>& reg, const std::string& prefix, int in, int out, Rng& rng) {
        w = reg.add_xavier(prefix + ".w", in, out, rng);
        b = reg.add_zeros(prefix + ".b", {out});
    }
    TensorT<T> operator()(const TensorT<T>& x) const { return linear(x, w, b); }
};

template <class T>
struct LayerNormLayer {
    TensorT<T> gamma, beta;

    LayerNormLayer() = default;
    LayerNormLayer(ParamRegistry<T>& reg, const std::string& prefix, int d) {
        gamma = reg.add_ones(prefix + ".gamma", {d});
        beta = reg.add_zeros(prefix + ".beta", {d});
    }
    TensorT<T> operator()(const TensorT<T>& x) const { return layernorm(x, gamma, beta); }
};

// single-head attention with q/k/v/output projections
template <class T>
struct AttentionBlock {
    LinearLayer<T> q, k, v, o;

    AttentionBlock() = default;
    AttentionBlock(ParamRegistry<T>& reg, const std::string& prefix, int d, Rng& rng)
        : q(reg, prefix + ".q", d, d, rng),
          k(reg, prefix + ".k", d, d, rng),
          v(reg, prefix + ".v", d, d, rng),
          o(reg, prefix + ".o", d, d, rng) {}

    TensorT<T> operator()(const TensorT<T>& queries, const TensorT<T>& memory) const {
        return o(attention(q(queries), k(memory), v(memory)));
    }
};

template <class T>
struct FeedForward {
    LinearLayer<T> in, out;

    FeedForward() = default;
    FeedForward(ParamRegistry<T>& reg, const std::string& prefix, int d, int hidden, Rng& rng)
        : in(reg, prefix + ".in", d, hidden, rng), out(reg, prefix + ".out", hidden, d, rng) {}

    TensorT<T> operator()(const TensorT<T>& x) const { return out(relu(in(x))); }
};

}  // namespace obj2seq
