#pragma once

#include <iostream>

#include "obj2seq/checkpoint.hpp"
#include "obj2seq/criterion.hpp"
#include "obj2seq/eval.hpp"
#include "obj2seq/optimizer.hpp"

namespace obj2seq {

struct EpochLog {
    int epoch = 0;
    float lr = 0;
    LossComponents mean;
    bool has_eval = false;
    double map = 0, ap50 = 0, multilabel = 0;

    std::string line() const {
        std::ostringstream os;
        os << "epoch=" << epoch << " lr=" << lr << " loss=" << mean.total
           << " obj=" << mean.objectness << " l1=" << mean.box_l1 << " giou=" << mean.giou;
        if (mean.oks != 0 || mean.kpt_l1 != 0)
            os << " oks=" << mean.oks << " kpt_l1=" << mean.kpt_l1;
        os << " asl=" << mean.indicator_asl;
        if (has_eval) os << " map=" << map << " ap50=" << ap50 << " mlmap=" << multilabel;
        return os.str();
    }
};

struct TrainOutcome {
    std::vector<EpochLog> logs;
    ModelEvalResult final_eval;
};

// End-to-end training over procedurally generated scenes. Deterministic for
// a fixed seed: scene content, shuffle order and parameter updates all
// derive from the config.
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg)
        : cfg_(cfg),
          model_(cfg),
          criterion_(cfg),
          optimizer_(model_.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.weight_decay) {
        cfg_.validate();
    }

    Model& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    AdamW<float>& optimizer() { return optimizer_; }

    float lr_at_epoch(int epoch_1based) const {
        return cfg_.lr *
               (epoch_1based > cfg_.lr_decay_epoch ? cfg_.lr_decay_factor : 1.0f);
    }

    void resume_from(const std::string& path) {
        auto ck = load_checkpoint(path);
        apply_checkpoint(ck, model_);
        if (!ck.adam_m.empty()) {
            optimizer_.set_step_count(ck.adam_step);
            optimizer_.moments_m() = ck.adam_m;
            optimizer_.moments_v() = ck.adam_v;
        }
        start_epoch_ = ck.epoch + 1;
    }

    TrainOutcome run(std::ostream* log = nullptr, const std::string& checkpoint_path = "") {
        apply_thread_cap();
        auto spec = SceneSpec::from_config(cfg_);
        auto train_set = generate_dataset(cfg_.data_seed, cfg_.train_scenes, spec);
        auto val_set =
            generate_dataset(cfg_.data_seed + 1000000ull, cfg_.val_scenes, spec);

        TrainOutcome outcome;
        long global_step = optimizer_.step_count();
        for (int epoch = start_epoch_; epoch <= cfg_.epochs; ++epoch) {
            float lr = lr_at_epoch(epoch);
            auto order = epoch_order(epoch, cfg_.train_scenes);

            LossComponents sum;
            int steps = 0;
            for (size_t pos = 0; pos < order.size(); pos += cfg_.batch) {
                size_t end = std::min(order.size(), pos + cfg_.batch);
                std::vector<ForwardResultT<float>> results;
                std::vector<const ForwardResultT<float>*> result_ptrs;
                std::vector<const SceneSample*> scene_ptrs;
                results.reserve(end - pos);
                for (size_t i = pos; i < end; ++i) {
                    const auto& scene = train_set[order[i]];
                    results.push_back(model_.forward(scene, Model::gt_class_set(scene),
                                                     Retention::train(cfg_.Kprime)));
                    scene_ptrs.push_back(&scene);
                }
                for (const auto& r : results) result_ptrs.push_back(&r);

                auto loss = criterion_(result_ptrs, scene_ptrs);
                ++global_step;
                if (!std::isfinite(loss.total.item()))
                    throw NumericError("training aborted: non-finite loss at step " +
                                       std::to_string(global_step) + " (" +
                                       loss.components.summary() + ")");

                model_.params().zero_grad();
                loss.total.backward();
                optimizer_.clip_global_norm(cfg_.clip_norm);
                optimizer_.step(lr);

                accumulate(sum, loss.components);
                ++steps;
            }

            EpochLog elog;
            elog.epoch = epoch;
            elog.lr = lr;
            elog.mean = mean_of(sum, steps);
            bool last = epoch == cfg_.epochs;
            if ((cfg_.eval_every > 0 && epoch % cfg_.eval_every == 0) || last) {
                auto ev = evaluate_model(model_, val_set, Retention::topk(cfg_.Kprime));
                elog.has_eval = true;
                elog.map = ev.report.ap;
                elog.ap50 = ev.report.ap50;
                elog.multilabel = ev.multilabel;
                if (last) outcome.final_eval = ev;
            }
            if (log) *log << elog.line() << "\n" << std::flush;
            outcome.logs.push_back(elog);

            if (!checkpoint_path.empty())
                save_checkpoint(checkpoint_path,
                                Checkpoint::capture(model_, &optimizer_, epoch));
        }
        return outcome;
    }

    std::vector<int> epoch_order(int epoch, int count) const {
        std::vector<int> order(count);
        for (int i = 0; i < count; ++i) order[i] = i;
        Rng rng(splitmix64(cfg_.seed * 0x9e3779b9ull + static_cast<std::uint64_t>(epoch)));
        for (int i = count - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
        return order;
    }

private:
    static void accumulate(LossComponents& sum, const LossComponents& x) {
        sum.total += x.total;
        sum.objectness += x.objectness;
        sum.box_l1 += x.box_l1;
        sum.giou += x.giou;
        sum.kpt_l1 += x.kpt_l1;
        sum.oks += x.oks;
        sum.indicator_asl += x.indicator_asl;
        sum.matched += x.matched;
        sum.unmatched += x.unmatched;
        sum.gt_count += x.gt_count;
    }
    static LossComponents mean_of(const LossComponents& sum, int steps) {
        LossComponents m = sum;
        if (steps == 0) return m;
        m.total /= steps;
        m.objectness /= steps;
        m.box_l1 /= steps;
        m.giou /= steps;
        m.kpt_l1 /= steps;
        m.oks /= steps;
        m.indicator_asl /= steps;
        return m;
    }

    TrainConfig cfg_;
    Model model_;
    CriterionT<float> criterion_;
    AdamW<float> optimizer_;
    int start_epoch_ = 1;
};

}  // namespace obj2seq
