#pragma once

#include "obj2seq/blocks.hpp"
#include "obj2seq/encoder.hpp"

namespace obj2seq {

template <class T>
struct DecodedQueriesT {
    TensorT<T> features;          // [Q x d]
    TensorT<T> reference_points;  // [Q x 2], each row (r_x, r_y) in (0,1)^2
};

// Object transformer decoder: pre-norm self-attention over queries, dense
// cross-attention to the image tokens, feed-forward. Reference points come
// from each query's position embedding alone, so they are identical across
// images and decoder layers.
template <class T>
class DecoderT {
public:
    DecoderT() = default;
    DecoderT(const TrainConfig& cfg, ParamRegistry<T>& reg, Rng& rng) {
        for (int l = 0; l < cfg.n_dec; ++l) {
            std::string p = "decoder.layer" + std::to_string(l);
            layers_.push_back({LayerNormLayer<T>(reg, p + ".ln_self", cfg.d),
                               AttentionBlock<T>(reg, p + ".self", cfg.d, rng),
                               LayerNormLayer<T>(reg, p + ".ln_cross", cfg.d),
                               AttentionBlock<T>(reg, p + ".cross", cfg.d, rng),
                               LayerNormLayer<T>(reg, p + ".ln_ffn", cfg.d),
                               FeedForward<T>(reg, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, rng)});
        }
        ref_head_ = LinearLayer<T>(reg, "decoder.ref_head", cfg.d, 2, rng);
    }

    TensorT<T> reference_points(const TensorT<T>& query_pos) const {
        return sigmoid(ref_head_(query_pos));
    }

    DecodedQueriesT<T> operator()(const TensorT<T>& queries, const TensorT<T>& query_pos,
                                  const ImageFeaturesT<T>& feats) const {
        DecodedQueriesT<T> out;
        auto x = queries;
        for (const auto& l : layers_) {
            auto a = l.ln_self(x);
            x = add(x, l.self(a, a));
            x = add(x, l.cross(l.ln_cross(x), feats.tokens));
            x = add(x, l.ffn(l.ln_ffn(x)));
        }
        out.features = x;
        out.reference_points = reference_points(query_pos);
        return out;
    }

private:
    struct Layer {
        LayerNormLayer<T> ln_self;
        AttentionBlock<T> self;
        LayerNormLayer<T> ln_cross;
        AttentionBlock<T> cross;
        LayerNormLayer<T> ln_ffn;
        FeedForward<T> ffn;
    };

    std::vector<Layer> layers_;
    LinearLayer<T> ref_head_;
};

}  // namespace obj2seq
