#pragma once

#include <map>

#include "obj2seq/losses.hpp"
#include "obj2seq/matching.hpp"
#include "obj2seq/model.hpp"

namespace obj2seq {

template <class T>
TensorT<T> bce_loss(const TensorT<T>& p, int y) {
    auto pc = clamp(p, T(kProbEps), T(1) - T(kProbEps));
    if (y == 1) return neg(log_(pc));
    return neg(log_(sub(TensorT<T>::filled(pc.shape(), T(1)), pc)));
}

struct LossComponents {
    double total = 0;
    // normalized, unweighted component values
    double objectness = 0;
    double box_l1 = 0;
    double giou = 0;
    double kpt_l1 = 0;
    double oks = 0;
    double indicator_asl = 0;
    int gt_count = 0;
    int matched = 0;
    int unmatched = 0;
    int labeled_keypoints = 0;
    int keypointless_instances = 0;  // matched gt with zero labeled keypoints
    int unmatchable_gt = 0;          // gt whose class spawned no queries

    std::string summary() const {
        std::ostringstream os;
        os << "total=" << total << " obj=" << objectness << " l1=" << box_l1
           << " giou=" << giou;
        if (oks != 0 || kpt_l1 != 0) os << " oks=" << oks << " kpt_l1=" << kpt_l1;
        os << " asl=" << indicator_asl;
        return os.str();
    }
};

// Match cost between one prediction and one ground-truth instance.
// Mismatched categories are excluded outright; class-aware queries only ever
// compete for objects of their own prompted class.
template <class T>
double pair_cost(const ObjectPredictionT<T>& pred, const GroundTruthInstance& gt, Task task,
                 const TrainConfig& cfg) {
    if (pred.class_id != gt.class_id) return kExcludedCost;
    double cost = cfg.w_obj * focal_pos_cost(static_cast<double>(pred.score.item()), cfg.focal);
    auto pbox = pred.box.value();
    double l1 = std::abs(pbox.xc - gt.box.xc) + std::abs(pbox.yc - gt.box.yc) +
                std::abs(pbox.w - gt.box.w) + std::abs(pbox.h - gt.box.h);
    auto overlap = iou_giou(pbox, gt.box);
    cost += cfg.w_l1 * l1 + cfg.w_giou * (1.0 - overlap.giou);
    if (task == Task::pose && gt.keypoints) {
        const auto& ks = *gt.keypoints;
        int labeled = ks.labeled_count();
        if (labeled > 0) {
            std::vector<std::array<float, 2>> pts;
            for (const auto& kp : pred.keypoints)
                pts.push_back({static_cast<float>(kp[0].item()),
                               static_cast<float>(kp[1].item())});
            double kl1 = 0;
            for (size_t i = 0; i < ks.size(); ++i) {
                if (ks.vis[i] == Visibility::invalid) continue;
                kl1 += std::abs(pts[i][0] - ks.points[i][0]) +
                       std::abs(pts[i][1] - ks.points[i][1]);
            }
            cost += cfg.w_oks * (1.0 - oks(pts, ks, gt.area)) +
                    cfg.w_kpt_l1 * (kl1 / labeled);
        }
    }
    return cost;
}

// Bipartite matching plus the full training loss. Matching is recomputed
// from current values every step and treated as a constant assignment by
// the backward pass.
template <class T>
class CriterionT {
public:
    explicit CriterionT(const TrainConfig& cfg) : cfg_(cfg) {}

    using Pairs = std::vector<std::pair<int, int>>;  // (prediction idx, instance idx)

    Pairs match(const std::vector<ObjectPredictionT<T>>& preds, const SceneSample& scene,
                int* unmatchable = nullptr) const {
        Pairs out;
        std::map<int, std::vector<int>> gt_by_class, pred_by_class;
        for (size_t i = 0; i < scene.instances.size(); ++i)
            gt_by_class[scene.instances[i].class_id].push_back(static_cast<int>(i));
        for (size_t i = 0; i < preds.size(); ++i)
            pred_by_class[preds[i].class_id].push_back(static_cast<int>(i));

        for (const auto& [cls, gts] : gt_by_class) {
            auto it = pred_by_class.find(cls);
            if (it == pred_by_class.end()) {
                if (unmatchable) *unmatchable += static_cast<int>(gts.size());
                continue;
            }
            const auto& rows = it->second;
            CostMatrix cost(static_cast<int>(rows.size()), static_cast<int>(gts.size()));
            for (int r = 0; r < cost.rows; ++r)
                for (int c = 0; c < cost.cols; ++c)
                    cost.at(r, c) =
                        pair_cost(preds[rows[r]], scene.instances[gts[c]], cfg_.task, cfg_);
            auto assignment = hungarian(cost);
            for (const auto& [r, c] : assignment.pairs) out.emplace_back(rows[r], gts[c]);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    struct BatchLoss {
        TensorT<T> total;
        LossComponents components;
        std::vector<Pairs> matches;
    };

    BatchLoss operator()(const std::vector<const ForwardResultT<T>*>& results,
                         const std::vector<const SceneSample*>& scenes) const {
        std::vector<Pairs> matches;
        int unmatchable = 0;
        for (size_t i = 0; i < results.size(); ++i)
            matches.push_back(match(results[i]->predictions, *scenes[i], &unmatchable));
        auto out = loss_given_matches(results, scenes, matches);
        out.components.unmatchable_gt = unmatchable;
        return out;
    }

    // assignment held fixed; this is the differentiable part
    BatchLoss loss_given_matches(const std::vector<const ForwardResultT<T>*>& results,
                                 const std::vector<const SceneSample*>& scenes,
                                 std::vector<Pairs> matches) const {
        if (results.size() != scenes.size() || results.size() != matches.size())
            throw ContractError("criterion: batch size mismatch");
        BatchLoss out;
        out.matches = std::move(matches);

        TensorT<T> obj_sum, l1_sum, giou_sum, oks_sum, kpt_sum, asl_sum;
        auto accumulate = [](TensorT<T>& acc, const TensorT<T>& term) {
            acc = acc.defined() ? add(acc, term) : term;
        };

        int gt_total = 0, labeled_total = 0;
        for (size_t i = 0; i < results.size(); ++i) {
            const auto& res = *results[i];
            const auto& scene = *scenes[i];
            const auto& pairs = out.matches[i];
            gt_total += static_cast<int>(scene.instances.size());
            out.components.gt_count += static_cast<int>(scene.instances.size());

            std::vector<char> is_matched(res.predictions.size(), 0);
            for (const auto& [pi, gi] : pairs) {
                is_matched[pi] = 1;
                const auto& pred = res.predictions[pi];
                const auto& gt = scene.instances[gi];
                accumulate(obj_sum, objectness_term(pred.score, 1));
                auto bl = box_loss(pred.box, gt.box);
                accumulate(l1_sum, bl.l1);
                accumulate(giou_sum, bl.giou_loss);
                if (cfg_.task == Task::pose && gt.keypoints) {
                    auto kl = keypoint_loss(pred.keypoints, *gt.keypoints, T(gt.area));
                    if (kl.labeled == 0) {
                        ++out.components.keypointless_instances;
                    } else {
                        accumulate(oks_sum, kl.oks_loss);
                        accumulate(kpt_sum, kl.l1_sum);
                        labeled_total += kl.labeled;
                    }
                }
                ++out.components.matched;
            }
            for (size_t pi = 0; pi < res.predictions.size(); ++pi) {
                if (is_matched[pi]) continue;
                accumulate(obj_sum, objectness_term(res.predictions[pi].score, 0));
                ++out.components.unmatched;
            }

            // auxiliary multi-label supervision on the indicator scores
            std::set<int> present;
            for (const auto& inst : scene.instances) present.insert(inst.class_id);
            for (int k = 0; k < cfg_.K; ++k)
                accumulate(asl_sum,
                           asymmetric_loss(elem(res.indicator.scores, k),
                                           present.count(k) ? 1 : 0, cfg_.asl));
        }
        out.components.labeled_keypoints = labeled_total;

        T gt_norm = T(1) / T(std::max(1, gt_total));
        T kpt_norm = T(1) / T(std::max(1, labeled_total));
        T batch_norm = T(1) / T(std::max<size_t>(1, results.size()));

        TensorT<T> total = TensorT<T>::scalar(T(0));
        auto add_term = [&](TensorT<T>& sum, T norm, float weight, double& component) {
            if (!sum.defined()) return;
            auto normalized = scale(sum, norm);
            component = static_cast<double>(normalized.item());
            total = add(total, scale(normalized, T(weight)));
        };
        add_term(obj_sum, gt_norm, cfg_.w_obj, out.components.objectness);
        add_term(l1_sum, gt_norm, cfg_.w_l1, out.components.box_l1);
        add_term(giou_sum, gt_norm, cfg_.w_giou, out.components.giou);
        add_term(oks_sum, gt_norm, cfg_.w_oks, out.components.oks);
        add_term(kpt_sum, kpt_norm, cfg_.w_kpt_l1, out.components.kpt_l1);
        add_term(asl_sum, batch_norm, cfg_.w_asl, out.components.indicator_asl);

        out.total = total;
        out.components.total = static_cast<double>(total.item());
        return out;
    }

private:
    TensorT<T> objectness_term(const TensorT<T>& score, int y) const {
        if (cfg_.task == Task::pose) return bce_loss(score, y);
        return focal_loss(score, y, cfg_.focal);
    }

    TrainConfig cfg_;
};

}  // namespace obj2seq
