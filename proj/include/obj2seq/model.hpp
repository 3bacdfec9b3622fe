#pragma once

#include "obj2seq/data.hpp"
#include "obj2seq/decoder.hpp"
#include "obj2seq/encoder.hpp"
#include "obj2seq/indicator.hpp"
#include "obj2seq/predictor.hpp"

namespace obj2seq {

template <class T>
struct ForwardResultT {
    ImageFeaturesT<T> feats;
    IndicatorOutputT<T> indicator;
    DecodedQueriesT<T> decoded;
    std::vector<ObjectPredictionT<T>> predictions;
};

template <class T>
class ModelT {
public:
    explicit ModelT(const TrainConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(splitmix64(cfg.seed ^ 0x6d0de1u));
        encoder_ = EncoderT<T>(cfg_, params_, rng);
        indicator_ = IndicatorT<T>(cfg_, params_, rng);
        decoder_ = DecoderT<T>(cfg_, params_, rng);
        predictor_ = PredictorT<T>(cfg_, params_, rng);
    }

    const TrainConfig& config() const { return cfg_; }
    ParamRegistry<T>& params() { return params_; }
    const ParamRegistry<T>& params() const { return params_; }
    const EncoderT<T>& encoder() const { return encoder_; }
    const IndicatorT<T>& indicator() const { return indicator_; }
    const DecoderT<T>& decoder() const { return decoder_; }
    const PredictorT<T>& predictor() const { return predictor_; }

    ImageFeaturesT<T> encode(const TensorT<T>& image) const { return encoder_(image); }

    // score all K classes, then apply the retention policy
    IndicatorOutputT<T> indicate(const ImageFeaturesT<T>& feats,
                                 const std::optional<std::set<int>>& gt_classes,
                                 const Retention& retention) const {
        return indicator_(feats, gt_classes, retention);
    }

    // rebuild queries for a different retention without recomputing scores
    void reindicate(IndicatorOutputT<T>& ind, const std::optional<std::set<int>>& gt_classes,
                    const Retention& retention) const {
        ind.retained = retain(ind.score_values, gt_classes, retention);
        ind.query_class.clear();
        ind.queries = {};
        ind.query_pos = {};
        if (!ind.retained.empty()) {
            auto qb = indicator_.build_queries(ind.class_features, ind.retained);
            ind.queries = qb.queries;
            ind.query_pos = qb.query_pos;
            ind.query_class = qb.query_class;
        }
    }

    // decoder + prediction heads for an already-retained indicator output
    ForwardResultT<T> detect(ImageFeaturesT<T> feats, IndicatorOutputT<T> ind) const {
        ForwardResultT<T> out;
        out.feats = std::move(feats);
        out.indicator = std::move(ind);
        if (!out.indicator.query_class.empty()) {
            out.decoded =
                decoder_(out.indicator.queries, out.indicator.query_pos, out.feats);
            out.predictions =
                predictor_.predict_objects(out.decoded, out.indicator, out.feats, cfg_.task,
                                           cfg_.head, cfg_.objectness, cfg_.J);
        }
        return out;
    }

    ForwardResultT<T> forward(const TensorT<T>& image,
                              const std::optional<std::set<int>>& gt_classes,
                              const Retention& retention) const {
        auto feats = encode(image);
        auto ind = indicate(feats, gt_classes, retention);
        return detect(std::move(feats), std::move(ind));
    }

    ForwardResultT<T> forward(const SceneSample& scene,
                              const std::optional<std::set<int>>& gt_classes,
                              const Retention& retention) const {
        return forward(to_image_tensor<T>(scene), gt_classes, retention);
    }

    static std::set<int> gt_class_set(const SceneSample& scene) {
        std::set<int> s;
        for (const auto& inst : scene.instances) s.insert(inst.class_id);
        return s;
    }

private:
    TrainConfig cfg_;
    ParamRegistry<T> params_;
    EncoderT<T> encoder_;
    IndicatorT<T> indicator_;
    DecoderT<T> decoder_;
    PredictorT<T> predictor_;
};

using Model = ModelT<float>;

}  // namespace obj2seq
