#pragma once

#include "obj2seq/blocks.hpp"
#include "obj2seq/config.hpp"

namespace obj2seq {

template <class T>
struct ImageFeaturesT {
    TensorT<T> tokens;  // [L x d]
    int grid_h = 0, grid_w = 0;
    TensorT<T> pos;  // [L x d] sinusoidal, constant
};

// 2-d sinusoidal position embedding over a grid, one half of the channels
// per spatial axis.
template <class T>
TensorT<T> sinusoidal_pos_2d(int grid_h, int grid_w, int d) {
    int half = d / 2;
    auto t = TensorT<T>::zeros({grid_h * grid_w, d});
    auto& v = t.mutable_values();
    for (int gy = 0; gy < grid_h; ++gy) {
        for (int gx = 0; gx < grid_w; ++gx) {
            size_t base = (static_cast<size_t>(gy) * grid_w + gx) * d;
            for (int i = 0; i < half; ++i) {
                double freq = std::pow(10000.0, -2.0 * (i / 2) / half);
                double ax = gx * freq, ay = gy * freq;
                v[base + i] = static_cast<T>((i % 2 == 0) ? std::sin(ax) : std::cos(ax));
                v[base + half + i] = static_cast<T>((i % 2 == 0) ? std::sin(ay) : std::cos(ay));
            }
        }
    }
    return t;
}

// Patch-embedding encoder with standard pre-norm self-attention layers.
template <class T>
class EncoderT {
public:
    EncoderT() = default;
    EncoderT(const TrainConfig& cfg, ParamRegistry<T>& reg, Rng& rng)
        : patch_(cfg.patch), d_(cfg.d) {
        proj_ = LinearLayer<T>(reg, "encoder.patch", 3 * cfg.patch * cfg.patch, cfg.d, rng);
        for (int l = 0; l < cfg.n_enc; ++l) {
            std::string p = "encoder.layer" + std::to_string(l);
            layers_.push_back({LayerNormLayer<T>(reg, p + ".ln_attn", cfg.d),
                               AttentionBlock<T>(reg, p + ".attn", cfg.d, rng),
                               LayerNormLayer<T>(reg, p + ".ln_ffn", cfg.d),
                               FeedForward<T>(reg, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, rng)});
        }
    }

    const LinearLayer<T>& patch_projection() const { return proj_; }

    // image: [3 x H x W] with values in [0,1]
    ImageFeaturesT<T> operator()(const TensorT<T>& image) const {
        if (image.shape().size() != 3 || image.dim(0) != 3)
            throw ShapeError("encoder: expected [3 x H x W] image, got " +
                             shape_str(image.shape()));
        int h = image.dim(1), w = image.dim(2);
        if (h % patch_ != 0 || w % patch_ != 0)
            throw ShapeError("encoder: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible by patch " + std::to_string(patch_));
        int gh = h / patch_, gw = w / patch_;
        int L = gh * gw;
        int pc = 3 * patch_ * patch_;

        // patches as a plain leaf; the image itself carries no gradient
        auto patches = TensorT<T>::zeros({L, pc});
        auto& pv = patches.mutable_values();
        const T* im = image.data();
        const size_t plane = static_cast<size_t>(h) * w;
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                size_t row = (static_cast<size_t>(gy) * gw + gx) * pc;
                size_t c = 0;
                for (int ch = 0; ch < 3; ++ch)
                    for (int py = 0; py < patch_; ++py)
                        for (int px = 0; px < patch_; ++px)
                            pv[row + c++] =
                                im[ch * plane +
                                   static_cast<size_t>(gy * patch_ + py) * w + gx * patch_ + px];
            }

        ImageFeaturesT<T> out;
        out.grid_h = gh;
        out.grid_w = gw;
        out.pos = sinusoidal_pos_2d<T>(gh, gw, d_);
        auto x = add(proj_(patches), out.pos);
        for (const auto& layer : layers_) {
            auto a = layer.ln_attn(x);
            x = add(x, layer.attn(a, a));
            x = add(x, layer.ffn(layer.ln_ffn(x)));
        }
        out.tokens = x;
        return out;
    }

private:
    struct Layer {
        LayerNormLayer<T> ln_attn;
        AttentionBlock<T> attn;
        LayerNormLayer<T> ln_ffn;
        FeedForward<T> ffn;
    };

    int patch_ = 4;
    int d_ = 64;
    LinearLayer<T> proj_;
    std::vector<Layer> layers_;
};

}  // namespace obj2seq
