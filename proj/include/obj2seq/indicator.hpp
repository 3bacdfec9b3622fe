#pragma once

#include <optional>
#include <set>

#include "obj2seq/blocks.hpp"
#include "obj2seq/encoder.hpp"

namespace obj2seq {

struct Retention {
    RetentionPolicy policy = RetentionPolicy::eval_topk;
    int kprime = 3;
    float theta = 0.3f;

    static Retention train(int kprime) { return {RetentionPolicy::train, kprime, 0.0f}; }
    static Retention topk(int kprime) { return {RetentionPolicy::eval_topk, kprime, 0.0f}; }
    static Retention threshold(float theta) {
        return {RetentionPolicy::eval_threshold, 0, theta};
    }
};

// Which prompted categories spawn object queries. Training guarantees every
// ground-truth class a slot and fills the rest by score rank; evaluation
// keeps either the top-K' scores or everything over a threshold. Ties break
// toward the lower class index and the result is sorted by class index.
inline std::vector<int> retain(const std::vector<float>& scores,
                               const std::optional<std::set<int>>& gt_classes,
                               const Retention& r) {
    int K = static_cast<int>(scores.size());
    std::vector<int> order(K);
    for (int i = 0; i < K; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    std::vector<int> retained;
    switch (r.policy) {
        case RetentionPolicy::train: {
            if (!gt_classes)
                throw ContractError("retain: train policy requires ground-truth classes");
            if (static_cast<int>(gt_classes->size()) > r.kprime)
                throw ContractError("retain: " + std::to_string(gt_classes->size()) +
                                    " ground-truth classes exceed capacity K'=" +
                                    std::to_string(r.kprime));
            retained.assign(gt_classes->begin(), gt_classes->end());
            for (int idx : order) {
                if (static_cast<int>(retained.size()) >= std::min(r.kprime, K)) break;
                if (!gt_classes->count(idx)) retained.push_back(idx);
            }
            break;
        }
        case RetentionPolicy::eval_topk: {
            for (int i = 0; i < std::min(r.kprime, K); ++i) retained.push_back(order[i]);
            break;
        }
        case RetentionPolicy::eval_threshold: {
            for (int i = 0; i < K; ++i)
                if (scores[i] >= r.theta) retained.push_back(i);
            break;
        }
    }
    std::sort(retained.begin(), retained.end());
    return retained;
}

template <class T>
struct IndicatorOutputT {
    TensorT<T> class_features;       // [K x d]
    TensorT<T> scores;               // [K x 1], in (0,1)
    std::vector<float> score_values; // snapshot of scores
    std::vector<int> retained;       // K' class indices, ascending
    TensorT<T> queries;              // [(K'N) x d]
    std::vector<int> query_class;    // query i -> retained[i / N]
    TensorT<T> query_pos;            // [(K'N) x d] position embedding per query
};

// Prompted Visual Indicator: prompt blocks (cross-attention only, classes
// never see each other), the class-existence classifier, and class-aware
// query construction as class feature + position embedding.
template <class T>
class IndicatorT {
public:
    IndicatorT() = default;
    IndicatorT(const TrainConfig& cfg, ParamRegistry<T>& reg, Rng& rng)
        : d_(cfg.d), n_(cfg.N) {
        prompts_ = reg.add("indicator.prompts", {cfg.K, cfg.d}, rng, T(0.1));
        pos_emb_ = reg.add("indicator.pos_emb", {cfg.N, cfg.d}, rng, T(0.1));
        for (int b = 0; b < kNumBlocks; ++b) {
            std::string p = "indicator.block" + std::to_string(b);
            blocks_.push_back({LayerNormLayer<T>(reg, p + ".ln_attn", cfg.d),
                               AttentionBlock<T>(reg, p + ".cross", cfg.d, rng),
                               LayerNormLayer<T>(reg, p + ".ln_ffn", cfg.d),
                               FeedForward<T>(reg, p + ".ffn", cfg.d, cfg.d * cfg.ffn_mult, rng)});
        }
        classifier_ = LinearLayer<T>(reg, "indicator.classifier", cfg.d, cfg.d, rng);
    }

    static constexpr int kNumBlocks = 2;

    const TensorT<T>& prompts() const { return prompts_; }
    const TensorT<T>& position_embeddings() const { return pos_emb_; }

    // class features f_c for a set of prompt rows; rows are independent
    TensorT<T> prompt_blocks(const TensorT<T>& prompt_rows,
                             const ImageFeaturesT<T>& feats) const {
        auto x = prompt_rows;
        for (const auto& b : blocks_) {
            x = add(x, b.cross(b.ln_attn(x), feats.tokens));
            x = add(x, b.ffn(b.ln_ffn(x)));
        }
        return x;
    }

    // s_C(k) = sigmoid(linear(f_c(k)) . c(k) / sqrt(d))
    TensorT<T> classify_existence(const TensorT<T>& class_features,
                                  const TensorT<T>& prompt_rows) const {
        auto dots = rowwise_dot(classifier_(class_features), prompt_rows);
        return sigmoid(scale(dots, T(1) / std::sqrt(T(d_))));
    }

    struct QueryBatch {
        TensorT<T> queries;
        TensorT<T> query_pos;
        std::vector<int> query_class;
    };

    // query i = f_c(retained[i / N]) + p(i mod N), class-major
    QueryBatch build_queries(const TensorT<T>& class_features,
                             const std::vector<int>& retained) const {
        int kprime = static_cast<int>(retained.size());
        if (kprime < 1) throw ContractError("build_queries: no retained classes");
        std::vector<int> class_rows(static_cast<size_t>(kprime) * n_);
        std::vector<int> pos_rows(class_rows.size());
        QueryBatch out;
        out.query_class.resize(class_rows.size());
        for (int i = 0; i < kprime * n_; ++i) {
            class_rows[i] = retained[i / n_];
            pos_rows[i] = i % n_;
            out.query_class[i] = retained[i / n_];
        }
        out.query_pos = gather_rows(pos_emb_, pos_rows);
        out.queries = add(gather_rows(class_features, class_rows), out.query_pos);
        return out;
    }

    IndicatorOutputT<T> operator()(const ImageFeaturesT<T>& feats,
                                   const std::optional<std::set<int>>& gt_classes,
                                   const Retention& retention) const {
        IndicatorOutputT<T> out;
        out.class_features = prompt_blocks(prompts_, feats);
        out.scores = classify_existence(out.class_features, prompts_);
        out.score_values.assign(out.scores.values().begin(), out.scores.values().end());
        out.retained = retain(out.score_values, gt_classes, retention);
        if (!out.retained.empty()) {
            auto qb = build_queries(out.class_features, out.retained);
            out.queries = qb.queries;
            out.query_pos = qb.query_pos;
            out.query_class = qb.query_class;
        }
        return out;
    }

private:
    struct Block {
        LayerNormLayer<T> ln_attn;
        AttentionBlock<T> cross;
        LayerNormLayer<T> ln_ffn;
        FeedForward<T> ffn;
    };

    int d_ = 64;
    int n_ = 10;
    TensorT<T> prompts_;
    TensorT<T> pos_emb_;
    std::vector<Block> blocks_;
    LinearLayer<T> classifier_;
};

}  // namespace obj2seq
