#pragma once

#include "obj2seq/blocks.hpp"
#include "obj2seq/decoder.hpp"
#include "obj2seq/geometry.hpp"
#include "obj2seq/indicator.hpp"

namespace obj2seq {

template <class T>
struct SequenceOutputT {
    std::vector<TensorT<T>> logits;  // per step, [Q x 1]
    std::vector<TensorT<T>> hidden_trace;  // z_out per step, [Q x d]
};

template <class T>
struct ObjectPredictionT {
    int query_index = 0;
    int class_id = 0;
    TensorT<T> score;       // s = s_C(k) * conditional
    TensorT<T> cond_score;  // conditional objectness alone
    BoxTensors<T> box;
    std::vector<std::array<TensorT<T>, 2>> keypoints;  // empty unless pose
    std::vector<TensorT<T>> raw_logits;                // z_1..z_T

    float score_value() const { return static_cast<float>(score.item()); }
};

// General sequence predictor and the prediction heads around it. Each step
// feeds the previous output feature back in; self-attention keys and values
// come only from steps already produced, cross-attention reads the image
// tokens. Every step has its own logit readout vector.
template <class T>
class PredictorT {
public:
    PredictorT() = default;
    PredictorT(const TrainConfig& cfg, ParamRegistry<T>& reg, Rng& rng)
        : d_(cfg.d), max_steps_(cfg.sequence_len() +
                                (cfg.objectness == ObjectnessMode::merged ? 1 : 0)) {
        w_q_ = reg.add_xavier("predictor.self.wq", cfg.d, cfg.d, rng);
        w_k_ = reg.add_xavier("predictor.self.wk", cfg.d, cfg.d, rng);
        w_v_ = reg.add_xavier("predictor.self.wv", cfg.d, cfg.d, rng);
        w_qc_ = reg.add_xavier("predictor.cross.wq", cfg.d, cfg.d, rng);
        w_kc_ = reg.add_xavier("predictor.cross.wk", cfg.d, cfg.d, rng);
        w_vc_ = reg.add_xavier("predictor.cross.wv", cfg.d, cfg.d, rng);
        step_heads_ = reg.add_xavier("predictor.step_heads", max_steps_, cfg.d, rng);
        obj_linear_ = LinearLayer<T>(reg, "predictor.objectness", cfg.d, cfg.d, rng);
        mlp_hidden1_ = LinearLayer<T>(reg, "predictor.mlp.h1", cfg.d, cfg.d, rng);
        mlp_hidden2_ = LinearLayer<T>(reg, "predictor.mlp.h2", cfg.d, cfg.d, rng);
        mlp_out_ = LinearLayer<T>(reg, "predictor.mlp.out", cfg.d, max_steps_, rng);
    }

    int max_steps() const { return max_steps_; }

    // autoregressive generation for all queries at once; rows never interact
    SequenceOutputT<T> generate_sequences(const TensorT<T>& object_features,
                                          const ImageFeaturesT<T>& feats, int steps) const {
        if (steps < 1 || steps > max_steps_)
            throw ContractError("generate_sequences: " + std::to_string(steps) +
                                " steps outside configured maximum " +
                                std::to_string(max_steps_));
        T inv_sqrt_d = T(1) / std::sqrt(T(d_));
        auto keys_img = matmul(feats.tokens, w_kc_);
        auto vals_img = matmul(feats.tokens, w_vc_);

        SequenceOutputT<T> out;
        std::vector<TensorT<T>> keys, vals;
        TensorT<T> z_in = object_features;
        for (int t = 0; t < steps; ++t) {
            keys.push_back(matmul(z_in, w_k_));
            vals.push_back(matmul(z_in, w_v_));
            auto q = matmul(z_in, w_q_);
            std::vector<TensorT<T>> scores;
            for (int s = 0; s <= t; ++s)
                scores.push_back(scale(rowwise_dot(q, keys[s]), inv_sqrt_d));
            auto attn = softmax(concat_cols(scores), 1);
            TensorT<T> z_hidden;
            for (int s = 0; s <= t; ++s) {
                auto contrib = scale_rows(vals[s], col(attn, s));
                z_hidden = z_hidden.defined() ? add(z_hidden, contrib) : contrib;
            }
            auto qc = matmul(z_hidden, w_qc_);
            auto cross = softmax(scale(matmul(qc, keys_img, false, true), inv_sqrt_d), 1);
            auto z_out = matmul_mix(cross, vals_img);
            out.logits.push_back(matmul(z_out, row(step_heads_, t), false, true));
            out.hidden_trace.push_back(z_out);
            z_in = z_out;
        }
        return out;
    }

    // single-query convenience wrapper over the batched path
    SequenceOutputT<T> generate_sequence(const TensorT<T>& f_o, const ImageFeaturesT<T>& feats,
                                         int steps) const {
        return generate_sequences(f_o, feats, steps);
    }

    // one-shot baseline: 3-layer MLP emitting all logits at once, [Q x steps]
    TensorT<T> mlp_head(const TensorT<T>& object_features, int steps) const {
        if (steps < 1 || steps > max_steps_)
            throw ContractError("mlp_head: " + std::to_string(steps) +
                                " steps outside configured maximum " +
                                std::to_string(max_steps_));
        auto h = relu(mlp_hidden1_(object_features));
        h = relu(mlp_hidden2_(h));
        auto full = mlp_out_(h);
        if (steps == max_steps_) return full;
        std::vector<TensorT<T>> cols;
        for (int t = 0; t < steps; ++t) cols.push_back(col(full, t));
        return concat_cols(cols);
    }

    // P(O | I, C) = sigmoid(linear(f_c) . f_o / sqrt(d)), per query
    TensorT<T> objectness_cond(const TensorT<T>& class_feature_rows,
                               const TensorT<T>& object_features) const {
        auto dots = rowwise_dot(obj_linear_(class_feature_rows), object_features);
        return sigmoid(scale(dots, T(1) / std::sqrt(T(d_))));
    }

    std::vector<ObjectPredictionT<T>> predict_objects(const DecodedQueriesT<T>& decoded,
                                                      const IndicatorOutputT<T>& ind,
                                                      const ImageFeaturesT<T>& feats, Task task,
                                                      HeadKind head, ObjectnessMode objectness,
                                                      int keypoints_j) const {
        int q_count = ind.query_class.empty() ? 0 : decoded.features.dim(0);
        std::vector<ObjectPredictionT<T>> preds;
        if (q_count == 0) return preds;

        int attr_steps = task == Task::pose ? 4 + 2 * keypoints_j : 4;
        bool merged = objectness == ObjectnessMode::merged;
        int total_steps = attr_steps + (merged ? 1 : 0);

        std::vector<TensorT<T>> logit_cols;
        if (head == HeadKind::sequence) {
            auto seq = generate_sequences(decoded.features, feats, total_steps);
            logit_cols = seq.logits;
        } else {
            auto m = mlp_head(decoded.features, total_steps);
            for (int t = 0; t < total_steps; ++t) logit_cols.push_back(col(m, t));
        }

        TensorT<T> cond;
        if (merged) {
            cond = sigmoid(logit_cols[0]);
        } else {
            auto class_rows = gather_rows(ind.class_features, ind.query_class);
            cond = objectness_cond(class_rows, decoded.features);
        }
        int off = merged ? 1 : 0;

        preds.reserve(q_count);
        for (int q = 0; q < q_count; ++q) {
            ObjectPredictionT<T> p;
            p.query_index = q;
            p.class_id = ind.query_class[q];
            p.cond_score = elem(cond, q);
            p.score = mul(p.cond_score, elem(ind.scores, p.class_id));
            for (int t = 0; t < attr_steps; ++t)
                p.raw_logits.push_back(elem(logit_cols[off + t], q));
            auto rx = elem(decoded.reference_points, 2 * q);
            auto ry = elem(decoded.reference_points, 2 * q + 1);
            p.box = decode_box_t(rx, ry,
                                 std::span<const TensorT<T>>(p.raw_logits.data(), 4));
            if (task == Task::pose)
                p.keypoints = decode_keypoints_t(
                    p.box, std::span<const TensorT<T>>(p.raw_logits.data() + 4,
                                                       static_cast<size_t>(2 * keypoints_j)));
            preds.push_back(std::move(p));
        }
        return preds;
    }

private:
    int d_ = 64;
    int max_steps_ = 4;
    TensorT<T> w_q_, w_k_, w_v_;
    TensorT<T> w_qc_, w_kc_, w_vc_;
    TensorT<T> step_heads_;  // one readout row per step
    LinearLayer<T> obj_linear_;
    LinearLayer<T> mlp_hidden1_, mlp_hidden2_, mlp_out_;
};

}  // namespace obj2seq
