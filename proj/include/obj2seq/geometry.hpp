#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "obj2seq/tensor.hpp"

namespace obj2seq {

inline constexpr float kInvSigmoidEps = 1e-5f;
inline constexpr float kAreaEps = 1e-9f;

// Normalized center-size box, all coordinates in [0,1].
struct BoxCxCyWH {
    float xc = 0, yc = 0, w = 0, h = 0;
};

enum class Visibility : int {
    invalid = 0,           // not annotated
    labeled_invisible = 1,
    labeled_visible = 2,
};

struct KeypointSet {
    std::vector<std::array<float, 2>> points;  // normalized (x, y)
    std::vector<Visibility> vis;
    std::vector<float> sigmas;  // per-point OKS falloff k_i

    std::size_t size() const { return points.size(); }
    int labeled_count() const {
        int n = 0;
        for (auto v : vis) n += (v != Visibility::invalid) ? 1 : 0;
        return n;
    }
};

template <class T>
T sigmoid_value(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// ln(p / (1-p)) with the argument clamped into [eps, 1-eps].
template <class T>
T inverse_sigmoid(T p, T eps = T(kInvSigmoidEps)) {
    T q = std::min(T(1) - eps, std::max(eps, p));
    return std::log(q / (T(1) - q));
}

// ---- plain-value decoding ----

template <class T>
BoxCxCyWH decode_box(T rx, T ry, std::span<const T> logits) {
    if (logits.size() != 4)
        throw ContractError("decode_box: expected 4 logits, got " +
                            std::to_string(logits.size()));
    BoxCxCyWH b;
    b.xc = static_cast<float>(sigmoid_value(inverse_sigmoid(rx) + logits[0]));
    b.yc = static_cast<float>(sigmoid_value(inverse_sigmoid(ry) + logits[1]));
    b.w = static_cast<float>(sigmoid_value(logits[2]));
    b.h = static_cast<float>(sigmoid_value(logits[3]));
    return b;
}

// Inverse of decode_box: recover the logits that decode to `box` at (rx, ry).
template <class T>
std::array<T, 4> encode_box(T rx, T ry, const BoxCxCyWH& box) {
    return {inverse_sigmoid(T(box.xc)) - inverse_sigmoid(rx),
            inverse_sigmoid(T(box.yc)) - inverse_sigmoid(ry), inverse_sigmoid(T(box.w)),
            inverse_sigmoid(T(box.h))};
}

// Keypoints from box-relative offsets; intentionally not clamped to [0,1].
template <class T>
std::vector<std::array<float, 2>> decode_keypoints(const BoxCxCyWH& box,
                                                   std::span<const T> logits) {
    if (logits.size() % 2 != 0)
        throw ContractError("decode_keypoints: logit count " + std::to_string(logits.size()) +
                            " is not 2*J");
    std::vector<std::array<float, 2>> pts(logits.size() / 2);
    for (size_t j = 0; j < pts.size(); ++j) {
        pts[j][0] = box.xc + box.w * static_cast<float>(logits[2 * j]);
        pts[j][1] = box.yc + box.h * static_cast<float>(logits[2 * j + 1]);
    }
    return pts;
}

// ---- IoU / GIoU ----

struct IouResult {
    double iou = 0;
    double giou = 0;
};

inline IouResult iou_giou(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    double ax1 = a.xc - a.w * 0.5, ax2 = a.xc + a.w * 0.5;
    double ay1 = a.yc - a.h * 0.5, ay2 = a.yc + a.h * 0.5;
    double bx1 = b.xc - b.w * 0.5, bx2 = b.xc + b.w * 0.5;
    double by1 = b.yc - b.h * 0.5, by2 = b.yc + b.h * 0.5;
    double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    double inter = iw * ih;
    double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
    double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) *
                  (std::max(ay2, by2) - std::min(ay1, by1));
    IouResult r;
    r.iou = inter / std::max(uni, static_cast<double>(kAreaEps));
    r.giou = r.iou - (hull - uni) / std::max(hull, static_cast<double>(kAreaEps));
    return r;
}

// Object keypoint similarity; only labeled gt keypoints contribute.
inline double oks(const std::vector<std::array<float, 2>>& pred, const KeypointSet& gt,
                  double gt_area) {
    if (gt_area <= 0) throw ContractError("oks: gt_area must be positive");
    if (pred.size() != gt.size()) throw ContractError("oks: keypoint count mismatch");
    double num = 0;
    int n = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt.vis[i] == Visibility::invalid) continue;
        double dx = pred[i][0] - gt.points[i][0];
        double dy = pred[i][1] - gt.points[i][1];
        double k = gt.sigmas[i];
        num += std::exp(-(dx * dx + dy * dy) / (2.0 * gt_area * k * k));
        ++n;
    }
    if (n == 0) throw ContractError("oks: similarity undefined with zero labeled keypoints");
    return num / n;
}

// ---- tape-attached variants (used by the training criterion) ----

template <class T>
struct BoxTensors {
    TensorT<T> xc, yc, w, h;

    BoxCxCyWH value() const {
        return {static_cast<float>(xc.item()), static_cast<float>(yc.item()),
                static_cast<float>(w.item()), static_cast<float>(h.item())};
    }
    static BoxTensors constant(const BoxCxCyWH& b) {
        return {TensorT<T>::scalar(T(b.xc)), TensorT<T>::scalar(T(b.yc)),
                TensorT<T>::scalar(T(b.w)), TensorT<T>::scalar(T(b.h))};
    }
};

// inverse sigmoid on a tensor, clamped like the scalar version
template <class T>
TensorT<T> inverse_sigmoid_t(const TensorT<T>& p, T eps = T(kInvSigmoidEps)) {
    auto q = clamp(p, eps, T(1) - eps);
    return sub(log_(q), log_(sub(TensorT<T>::filled(q.shape(), T(1)), q)));
}

template <class T>
BoxTensors<T> decode_box_t(const TensorT<T>& rx, const TensorT<T>& ry,
                           std::span<const TensorT<T>> logits) {
    if (logits.size() != 4)
        throw ContractError("decode_box: expected 4 logits, got " +
                            std::to_string(logits.size()));
    BoxTensors<T> b;
    b.xc = sigmoid(add(inverse_sigmoid_t(rx), logits[0]));
    b.yc = sigmoid(add(inverse_sigmoid_t(ry), logits[1]));
    b.w = sigmoid(logits[2]);
    b.h = sigmoid(logits[3]);
    return b;
}

template <class T>
std::vector<std::array<TensorT<T>, 2>> decode_keypoints_t(const BoxTensors<T>& box,
                                                          std::span<const TensorT<T>> logits) {
    if (logits.size() % 2 != 0)
        throw ContractError("decode_keypoints: logit count " + std::to_string(logits.size()) +
                            " is not 2*J");
    std::vector<std::array<TensorT<T>, 2>> pts(logits.size() / 2);
    for (size_t j = 0; j < pts.size(); ++j) {
        pts[j][0] = add(box.xc, mul(box.w, logits[2 * j]));
        pts[j][1] = add(box.yc, mul(box.h, logits[2 * j + 1]));
    }
    return pts;
}

template <class T>
struct IouTensors {
    TensorT<T> iou, giou;
};

template <class T>
IouTensors<T> iou_giou_t(const BoxTensors<T>& a, const BoxTensors<T>& b) {
    auto half = [](const TensorT<T>& t) { return scale(t, T(0.5)); };
    auto ax1 = sub(a.xc, half(a.w)), ax2 = add(a.xc, half(a.w));
    auto ay1 = sub(a.yc, half(a.h)), ay2 = add(a.yc, half(a.h));
    auto bx1 = sub(b.xc, half(b.w)), bx2 = add(b.xc, half(b.w));
    auto by1 = sub(b.yc, half(b.h)), by2 = add(b.yc, half(b.h));
    auto iw = relu(sub(elem_min(ax2, bx2), elem_max(ax1, bx1)));
    auto ih = relu(sub(elem_min(ay2, by2), elem_max(ay1, by1)));
    auto inter = mul(iw, ih);
    auto uni = sub(add(mul(a.w, a.h), mul(b.w, b.h)), inter);
    auto hw = sub(elem_max(ax2, bx2), elem_min(ax1, bx1));
    auto hh = sub(elem_max(ay2, by2), elem_min(ay1, by1));
    auto hull = mul(hw, hh);
    IouTensors<T> r;
    r.iou = div(inter, clamp_min(uni, T(kAreaEps)));
    r.giou = sub(r.iou, div(sub(hull, uni), clamp_min(hull, T(kAreaEps))));
    return r;
}

template <class T>
TensorT<T> oks_t(const std::vector<std::array<TensorT<T>, 2>>& pred, const KeypointSet& gt,
                 T gt_area) {
    if (gt_area <= 0) throw ContractError("oks: gt_area must be positive");
    if (pred.size() != gt.size()) throw ContractError("oks: keypoint count mismatch");
    TensorT<T> num;
    int n = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt.vis[i] == Visibility::invalid) continue;
        auto dx = add_const(pred[i][0], T(-gt.points[i][0]));
        auto dy = add_const(pred[i][1], T(-gt.points[i][1]));
        auto d2 = add(mul(dx, dx), mul(dy, dy));
        T denom = T(2) * gt_area * T(gt.sigmas[i]) * T(gt.sigmas[i]);
        auto term = exp_(scale(d2, T(-1) / denom));
        num = num.defined() ? add(num, term) : term;
        ++n;
    }
    if (n == 0) throw ContractError("oks: similarity undefined with zero labeled keypoints");
    return scale(num, T(1) / T(n));
}

}  // namespace obj2seq
