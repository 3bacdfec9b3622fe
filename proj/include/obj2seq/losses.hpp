#pragma once

#include "obj2seq/geometry.hpp"
#include "obj2seq/tensor.hpp"

namespace obj2seq {

inline constexpr float kProbEps = 1e-8f;

struct FocalParams {
    float alpha = 0.25f;
    float gamma = 2.0f;
};

struct AslParams {
    float gamma_pos = 0.0f;
    float gamma_neg = 4.0f;
    float clip = 0.05f;
};

// ---- plain-value losses (matching costs, oracles) ----

template <class T>
T focal_loss_value(T p, int y, const FocalParams& fp = {}) {
    p = std::min(T(1) - T(kProbEps), std::max(T(kProbEps), p));
    T pt = y == 1 ? p : T(1) - p;
    T at = y == 1 ? T(fp.alpha) : T(1) - T(fp.alpha);
    return -at * std::pow(T(1) - pt, T(fp.gamma)) * std::log(pt);
}

// positive-target focal term, used as the classification part of the match cost
template <class T>
T focal_pos_cost(T p, const FocalParams& fp = {}) {
    return focal_loss_value(p, 1, fp);
}

template <class T>
T asymmetric_loss_value(T p, int y, const AslParams& ap = {}) {
    p = std::min(T(1) - T(kProbEps), std::max(T(kProbEps), p));
    if (y == 1) return -std::pow(T(1) - p, T(ap.gamma_pos)) * std::log(p);
    T pm = std::max(p - T(ap.clip), T(0));
    return -std::pow(pm, T(ap.gamma_neg)) * std::log(T(1) - pm);
}

// ---- tape-attached losses ----

template <class T>
TensorT<T> focal_loss(const TensorT<T>& p, int y, const FocalParams& fp = {}) {
    auto pc = clamp(p, T(kProbEps), T(1) - T(kProbEps));
    auto pt = y == 1 ? pc : sub(TensorT<T>::filled(pc.shape(), T(1)), pc);
    T at = y == 1 ? T(fp.alpha) : T(1) - T(fp.alpha);
    auto one_minus = sub(TensorT<T>::filled(pt.shape(), T(1)), pt);
    return scale(mul(pow_const(one_minus, T(fp.gamma)), neg(log_(pt))), at);
}

template <class T>
TensorT<T> asymmetric_loss(const TensorT<T>& p, int y, const AslParams& ap = {}) {
    auto pc = clamp(p, T(kProbEps), T(1) - T(kProbEps));
    if (y == 1) {
        auto one_minus = sub(TensorT<T>::filled(pc.shape(), T(1)), pc);
        return mul(pow_const(one_minus, T(ap.gamma_pos)), neg(log_(pc)));
    }
    auto pm = relu(add_const(pc, -T(ap.clip)));
    auto one_minus = sub(TensorT<T>::filled(pm.shape(), T(1)), pm);
    return mul(pow_const(pm, T(ap.gamma_neg)), neg(log_(one_minus)));
}

template <class T>
struct BoxLossParts {
    TensorT<T> l1;         // sum of |delta| over the 4 coordinates
    TensorT<T> giou_loss;  // 1 - giou
};

template <class T>
BoxLossParts<T> box_loss(const BoxTensors<T>& pred, const BoxCxCyWH& gt) {
    auto gtb = BoxTensors<T>::constant(gt);
    auto l1 = add(add(abs_(sub(pred.xc, gtb.xc)), abs_(sub(pred.yc, gtb.yc))),
                  add(abs_(sub(pred.w, gtb.w)), abs_(sub(pred.h, gtb.h))));
    auto g = iou_giou_t(pred, gtb).giou;
    BoxLossParts<T> out;
    out.l1 = l1;
    out.giou_loss = sub(TensorT<T>::scalar(T(1)), g);
    return out;
}

template <class T>
struct KeypointLossParts {
    TensorT<T> l1_sum;    // summed over labeled keypoints, unnormalized
    TensorT<T> oks_loss;  // 1 - oks, zero tensor when nothing is labeled
    int labeled = 0;
};

template <class T>
KeypointLossParts<T> keypoint_loss(const std::vector<std::array<TensorT<T>, 2>>& pred,
                                   const KeypointSet& gt, T gt_area) {
    if (pred.size() != gt.size()) throw ContractError("keypoint_loss: count mismatch");
    KeypointLossParts<T> out;
    out.labeled = gt.labeled_count();
    if (out.labeled == 0) {
        out.l1_sum = TensorT<T>::scalar(T(0));
        out.oks_loss = TensorT<T>::scalar(T(0));
        return out;
    }
    TensorT<T> l1;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt.vis[i] == Visibility::invalid) continue;
        auto term = add(abs_(add_const(pred[i][0], -T(gt.points[i][0]))),
                        abs_(add_const(pred[i][1], -T(gt.points[i][1]))));
        l1 = l1.defined() ? add(l1, term) : term;
    }
    out.l1_sum = l1;
    out.oks_loss = sub(TensorT<T>::scalar(T(1)), oks_t(pred, gt, gt_area));
    return out;
}

}  // namespace obj2seq
