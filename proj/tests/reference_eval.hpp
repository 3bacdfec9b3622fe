#pragma once

// Plain reference evaluator: same matching and interpolation semantics as
// obj2seq::average_precision, written independently with naive loops.
// Test-only oracle for cross-checking the production evaluator.

#include <algorithm>
#include <vector>

#include "obj2seq/eval.hpp"

namespace refeval {

using obj2seq::Detection;
using obj2seq::GroundTruthInstance;

inline double similarity(const Detection& d, const GroundTruthInstance& g, bool use_oks) {
    if (!use_oks) return obj2seq::iou_giou(d.box, g.box).iou;
    if (!g.keypoints || g.keypoints->labeled_count() == 0) return 0.0;
    return obj2seq::oks(d.keypoints, *g.keypoints, g.area);
}

inline double class_ap_at(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<GroundTruthInstance>>& gts, int cls,
                          double thr, bool use_oks, int max_dets, double* recall_out) {
    // flatten and rank this class's detections
    struct Entry {
        float score;
        int image;
        int order;
        Detection det;
    };
    std::vector<Entry> entries;
    for (size_t i = 0; i < dets.size(); ++i) {
        // apply per-image cap by score first
        std::vector<Detection> capped = dets[i];
        std::stable_sort(capped.begin(), capped.end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.index < b.index;
        });
        if (static_cast<int>(capped.size()) > max_dets) capped.resize(max_dets);
        for (const auto& d : capped)
            if (d.class_id == cls)
                entries.push_back({d.score, static_cast<int>(i), d.index, d});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.order < b.order;
    });

    int n_gt = 0;
    for (const auto& im : gts)
        for (const auto& g : im) n_gt += (g.class_id == cls) ? 1 : 0;
    if (n_gt == 0) {
        if (recall_out) *recall_out = 0;
        return -1.0;
    }

    std::vector<std::vector<bool>> used(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);

    std::vector<int> tp_flags;
    for (const auto& e : entries) {
        int best = -1;
        double best_sim = thr;
        for (size_t g = 0; g < gts[e.image].size(); ++g) {
            if (gts[e.image][g].class_id != cls || used[e.image][g]) continue;
            double s = similarity(e.det, gts[e.image][g], use_oks);
            if (s >= best_sim && (best < 0 || s > best_sim)) {
                best = static_cast<int>(g);
                best_sim = s;
            }
        }
        if (best >= 0) {
            used[e.image][best] = true;
            tp_flags.push_back(1);
        } else {
            tp_flags.push_back(0);
        }
    }

    int tp = 0, fp = 0;
    std::vector<double> prec, rec;
    for (int f : tp_flags) {
        if (f)
            ++tp;
        else
            ++fp;
        prec.push_back(static_cast<double>(tp) / (tp + fp));
        rec.push_back(static_cast<double>(tp) / n_gt);
    }
    if (recall_out) *recall_out = n_gt > 0 ? static_cast<double>(tp) / n_gt : 0.0;

    double ap = 0;
    for (int r = 0; r <= 100; ++r) {
        double target = r / 100.0;
        double best_p = 0;
        for (size_t i = 0; i < prec.size(); ++i)
            if (rec[i] >= target) best_p = std::max(best_p, prec[i]);
        ap += best_p;
    }
    return ap / 101.0;
}

struct Report {
    double ap = 0, ap50 = 0, ap75 = 0, ar = 0;
    int classes = 0;
};

inline Report evaluate(const std::vector<std::vector<Detection>>& dets,
                       const std::vector<std::vector<GroundTruthInstance>>& gts,
                       int num_classes, bool use_oks = false, int max_dets = 100) {
    Report rep;
    std::vector<double> thresholds;
    for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);
    for (int cls = 0; cls < num_classes; ++cls) {
        double class_sum = 0, recall_sum = 0;
        bool any = false;
        for (double t : thresholds) {
            double recall = 0;
            double ap = class_ap_at(dets, gts, cls, t, use_oks, max_dets, &recall);
            if (ap < 0) break;
            any = true;
            class_sum += ap;
            recall_sum += recall;
            if (t == 0.5) rep.ap50 += ap;
            if (t == 0.75) rep.ap75 += ap;
        }
        if (!any) continue;
        rep.ap += class_sum / thresholds.size();
        rep.ar += recall_sum / thresholds.size();
        ++rep.classes;
    }
    if (rep.classes > 0) {
        rep.ap /= rep.classes;
        rep.ap50 /= rep.classes;
        rep.ap75 /= rep.classes;
        rep.ar /= rep.classes;
    }
    return rep;
}

}  // namespace refeval
