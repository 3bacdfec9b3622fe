#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "obj2seq/criterion.hpp"

namespace obj2seq {

enum class Similarity { iou, oks };

struct Detection {
    int image = 0;
    int index = 0;  // per-image emission order, tie breaker
    int class_id = 0;
    float score = 0;
    BoxCxCyWH box;
    std::vector<std::array<float, 2>> keypoints;
};

struct EvalOptions {
    Similarity similarity = Similarity::iou;
    std::vector<double> thresholds;  // default .50:.05:.95
    int max_dets = 100;
    // normalized-area range [lo, hi); gt outside is ignored, not counted
    double area_lo = 0.0;
    double area_hi = 1e9;

    static std::vector<double> coco_thresholds() {
        std::vector<double> t;
        for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
        return t;
    }
    EvalOptions() : thresholds(coco_thresholds()) {}
};

struct EvalReport {
    double ap = 0;    // mean over classes and thresholds
    double ap50 = 0;
    double ap75 = 0;
    double ar = 0;    // mean recall over classes and thresholds
    std::vector<double> per_class;  // -1 for classes with no gt
    int classes_evaluated = 0;
    int detections = 0;
    int gt_instances = 0;
};

namespace detail {

inline double similarity_value(const Detection& d, const GroundTruthInstance& g,
                               Similarity sim) {
    if (sim == Similarity::iou) return iou_giou(d.box, g.box).iou;
    if (!g.keypoints || g.keypoints->labeled_count() == 0) return 0.0;
    return oks(d.keypoints, *g.keypoints, g.area);
}

}  // namespace detail

// COCO-style average precision: per class and threshold, detections ranked
// by score are greedily matched one-to-one to ground truth per image, then
// precision is interpolated at 101 recall points. Ground truth outside the
// area range is ignored; detections matched to ignored gt count as neither
// true nor false positives.
inline EvalReport average_precision(const std::vector<std::vector<Detection>>& dets_per_image,
                                    const std::vector<std::vector<GroundTruthInstance>>& gts,
                                    int num_classes, const EvalOptions& opt = {}) {
    if (dets_per_image.size() != gts.size())
        throw ContractError("average_precision: image count mismatch");
    const int images = static_cast<int>(gts.size());

    // cap detections per image by score
    std::vector<std::vector<Detection>> dets(images);
    for (int i = 0; i < images; ++i) {
        dets[i] = dets_per_image[i];
        std::stable_sort(dets[i].begin(), dets[i].end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.index < b.index;
        });
        if (static_cast<int>(dets[i].size()) > opt.max_dets) dets[i].resize(opt.max_dets);
    }

    EvalReport rep;
    rep.per_class.assign(num_classes, -1.0);
    for (const auto& im : gts) rep.gt_instances += static_cast<int>(im.size());
    for (const auto& im : dets) rep.detections += static_cast<int>(im.size());

    double ap_sum = 0, ap50_sum = 0, ap75_sum = 0, ar_sum = 0;
    for (int cls = 0; cls < num_classes; ++cls) {
        // per-image gt of this class with ignore flags
        std::vector<std::vector<int>> gt_idx(images);
        std::vector<std::vector<bool>> gt_ignore(images);
        int n_gt = 0;
        for (int i = 0; i < images; ++i)
            for (size_t g = 0; g < gts[i].size(); ++g)
                if (gts[i][g].class_id == cls) {
                    bool ignore = gts[i][g].area < opt.area_lo || gts[i][g].area >= opt.area_hi;
                    gt_idx[i].push_back(static_cast<int>(g));
                    gt_ignore[i].push_back(ignore);
                    if (!ignore) ++n_gt;
                }
        if (n_gt == 0) continue;

        // global ranking: score desc, then image asc, then emission order
        struct Ranked {
            float score;
            int image, index, det;
        };
        std::vector<Ranked> ranked;
        for (int i = 0; i < images; ++i)
            for (size_t d = 0; d < dets[i].size(); ++d)
                if (dets[i][d].class_id == cls)
                    ranked.push_back({dets[i][d].score, i, dets[i][d].index,
                                      static_cast<int>(d)});
        std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image != b.image) return a.image < b.image;
            return a.index < b.index;
        });

        double class_ap = 0, class_recall = 0;
        for (double thr : opt.thresholds) {
            std::vector<std::vector<bool>> taken(images);
            for (int i = 0; i < images; ++i) taken[i].assign(gt_idx[i].size(), false);

            std::vector<int> flags;  // 1 TP, 0 FP, -1 ignored
            flags.reserve(ranked.size());
            for (const auto& r : ranked) {
                const auto& det = dets[r.image][r.det];
                double best = thr;
                int best_g = -1;
                for (size_t g = 0; g < gt_idx[r.image].size(); ++g) {
                    if (taken[r.image][g]) continue;
                    double sim = detail::similarity_value(
                        det, gts[r.image][gt_idx[r.image][g]], opt.similarity);
                    if (sim >= best && (best_g < 0 || sim > best)) {
                        best = sim;
                        best_g = static_cast<int>(g);
                    }
                }
                if (best_g >= 0) {
                    taken[r.image][best_g] = true;
                    flags.push_back(gt_ignore[r.image][best_g] ? -1 : 1);
                } else {
                    flags.push_back(0);
                }
            }

            // precision/recall over the ranked list, ignored entries skipped
            std::vector<double> precision, recall;
            int tp = 0, fp = 0;
            for (int f : flags) {
                if (f < 0) continue;
                if (f == 1)
                    ++tp;
                else
                    ++fp;
                precision.push_back(static_cast<double>(tp) / (tp + fp));
                recall.push_back(static_cast<double>(tp) / n_gt);
            }

            // 101-point interpolation with the running max from the right
            double ap_t = 0;
            if (!precision.empty()) {
                std::vector<double> pmax = precision;
                for (int i = static_cast<int>(pmax.size()) - 2; i >= 0; --i)
                    pmax[i] = std::max(pmax[i], pmax[i + 1]);
                size_t pos = 0;
                for (int r = 0; r <= 100; ++r) {
                    double target = r / 100.0;
                    while (pos < recall.size() && recall[pos] < target) ++pos;
                    if (pos < recall.size()) ap_t += pmax[pos];
                }
                ap_t /= 101.0;
            }
            class_ap += ap_t;
            class_recall += static_cast<double>(tp) / n_gt;

            if (thr == 0.5) ap50_sum += ap_t;
            if (thr == 0.75) ap75_sum += ap_t;
        }
        class_ap /= static_cast<double>(opt.thresholds.size());
        class_recall /= static_cast<double>(opt.thresholds.size());
        rep.per_class[cls] = class_ap;
        ap_sum += class_ap;
        ar_sum += class_recall;
        ++rep.classes_evaluated;
    }

    if (rep.classes_evaluated > 0) {
        rep.ap = ap_sum / rep.classes_evaluated;
        rep.ap50 = ap50_sum / rep.classes_evaluated;
        rep.ap75 = ap75_sum / rep.classes_evaluated;
        rep.ar = ar_sum / rep.classes_evaluated;
    }
    return rep;
}

// Macro-averaged multi-label AP over the image ranking of each class score.
inline double multilabel_map(const std::vector<std::vector<float>>& scores,
                             const std::vector<std::vector<int>>& targets) {
    if (scores.size() != targets.size())
        throw ContractError("multilabel_map: image count mismatch");
    if (scores.empty()) return 0.0;
    size_t K = scores[0].size();
    double sum = 0;
    int classes = 0;
    for (size_t k = 0; k < K; ++k) {
        std::vector<int> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return scores[a][k] > scores[b][k];
        });
        int n_pos = 0;
        for (const auto& t : targets) n_pos += t[k] ? 1 : 0;
        if (n_pos == 0) continue;
        double ap = 0;
        int hits = 0;
        for (size_t rank = 0; rank < order.size(); ++rank) {
            if (!targets[order[rank]][k]) continue;
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
        sum += ap / n_pos;
        ++classes;
    }
    return classes > 0 ? sum / classes : 0.0;
}

// ---- model evaluation plumbing ----

template <class T>
std::vector<Detection> to_detections(const ForwardResultT<T>& res, int image_id,
                                     bool use_class_score = true) {
    std::vector<Detection> out;
    for (const auto& p : res.predictions) {
        Detection d;
        d.image = image_id;
        d.index = p.query_index;
        d.class_id = p.class_id;
        d.score = static_cast<float>(use_class_score ? p.score.item() : p.cond_score.item());
        d.box = p.box.value();
        for (const auto& kp : p.keypoints)
            d.keypoints.push_back({static_cast<float>(kp[0].item()),
                                   static_cast<float>(kp[1].item())});
        out.push_back(d);
    }
    return out;
}

struct ModelEvalResult {
    EvalReport report;
    double multilabel = 0;
    long queries_evaluated = 0;
};

template <class T>
ModelEvalResult evaluate_model(const ModelT<T>& model, const std::vector<SceneSample>& scenes,
                               const Retention& retention, bool use_class_score = true,
                               EvalOptions opt = {}) {
    const auto& cfg = model.config();
    if (cfg.task == Task::pose) opt.similarity = Similarity::oks;
    std::vector<std::vector<Detection>> dets(scenes.size());
    std::vector<std::vector<GroundTruthInstance>> gts(scenes.size());
    std::vector<std::vector<float>> score_rows(scenes.size());
    std::vector<std::vector<int>> target_rows(scenes.size());
    long queries = 0;
    for (size_t i = 0; i < scenes.size(); ++i) {
        auto res = model.forward(scenes[i], std::nullopt, retention);
        dets[i] = to_detections(res, static_cast<int>(i), use_class_score);
        gts[i] = scenes[i].instances;
        queries += static_cast<long>(res.indicator.query_class.size());
        score_rows[i] = res.indicator.score_values;
        target_rows[i].assign(cfg.K, 0);
        for (const auto& inst : scenes[i].instances) target_rows[i][inst.class_id] = 1;
    }
    ModelEvalResult out;
    out.report = average_precision(dets, gts, cfg.K, opt);
    out.multilabel = multilabel_map(score_rows, target_rows);
    out.queries_evaluated = queries;
    return out;
}

// ---- retention-policy sweep ----

struct SweepRow {
    std::string policy;  // "topk" or "threshold", "_nosc" suffix without s_C
    double param = 0;    // K' or theta
    double map = 0, ap50 = 0, ap75 = 0;
    long queries = 0;
};

template <class T>
std::vector<SweepRow> retention_sweep(const ModelT<T>& model,
                                      const std::vector<SceneSample>& scenes,
                                      const std::vector<int>& kprime_grid,
                                      const std::vector<float>& theta_grid) {
    const auto& cfg = model.config();
    // encode and score once per image; retention and the decoder stage are
    // recomputed per policy
    std::vector<ImageFeaturesT<T>> feats;
    std::vector<IndicatorOutputT<T>> inds;
    std::vector<std::vector<GroundTruthInstance>> gts;
    feats.reserve(scenes.size());
    for (const auto& scene : scenes) {
        auto f = model.encode(to_image_tensor<T>(scene));
        inds.push_back(model.indicate(f, std::nullopt, Retention::topk(cfg.Kprime)));
        feats.push_back(std::move(f));
        gts.push_back(scene.instances);
    }

    EvalOptions opt;
    if (cfg.task == Task::pose) opt.similarity = Similarity::oks;

    std::vector<SweepRow> rows;
    auto run_policy = [&](const std::string& name, double param, const Retention& ret,
                          bool use_class_score) {
        std::vector<std::vector<Detection>> dets(scenes.size());
        long queries = 0;
        for (size_t i = 0; i < scenes.size(); ++i) {
            auto ind = inds[i];
            model.reindicate(ind, std::nullopt, ret);
            auto res = model.detect(feats[i], std::move(ind));
            dets[i] = to_detections(res, static_cast<int>(i), use_class_score);
            queries += static_cast<long>(res.indicator.query_class.size());
        }
        auto rep = average_precision(dets, gts, cfg.K, opt);
        SweepRow row;
        row.policy = name + (use_class_score ? "" : "_nosc");
        row.param = param;
        row.map = rep.ap;
        row.ap50 = rep.ap50;
        row.ap75 = rep.ap75;
        row.queries = queries;
        rows.push_back(row);
    };

    for (bool use_sc : {true, false}) {
        for (int kp : kprime_grid) run_policy("topk", kp, Retention::topk(kp), use_sc);
        for (float th : theta_grid)
            run_policy("threshold", th, Retention::threshold(th), use_sc);
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "policy,param,map,ap50,ap75,queries\n";
    for (const auto& r : rows)
        os << r.policy << "," << r.param << "," << r.map << "," << r.ap50 << "," << r.ap75
           << "," << r.queries << "\n";
    return os.str();
}

}  // namespace obj2seq
