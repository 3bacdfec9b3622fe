#pragma once

#include <functional>
#include <string>
#include <vector>

#include "obj2seq/tensor.hpp"

namespace obj2seq {

struct GradCheckReport {
    double max_rel_error = 0.0;
    int checked = 0;
    std::string worst;  // "input 2 @ 17: analytic=..., fd=..."

    bool passed(double tol) const { return max_rel_error < tol; }
};

// Compares reverse-mode gradients against central finite differences, one
// input coordinate at a time. Evaluate with T=double for a trustworthy
// oracle; the same templated code path is what runs in float during training.
//
// Relative error per coordinate is |a-fd| / max(|a|, |fd|, floor); the floor
// keeps near-zero coordinates from dividing noise by noise.
template <class T>
GradCheckReport grad_check(const std::function<TensorT<T>(std::vector<TensorT<T>>&)>& f,
                           std::vector<TensorT<T>>& inputs, T h = T(1e-3),
                           double denom_floor = 1e-6) {
    if (h <= T(0)) throw ContractError("grad_check: step h must be positive");
    for (auto& in : inputs) in.set_requires_grad(true);

    auto out = f(inputs);
    if (out.size() != 1)
        throw ContractError("grad_check: function output must be scalar, got shape " +
                            shape_str(out.shape()));
    for (auto& in : inputs) in.zero_grad();
    out.backward();
    std::vector<std::vector<T>> analytic;
    for (auto& in : inputs)
        analytic.push_back(in.grad().empty() ? std::vector<T>(in.size(), T(0)) : in.grad());

    GradCheckReport rep;
    for (size_t ii = 0; ii < inputs.size(); ++ii) {
        auto& in = inputs[ii];
        for (size_t c = 0; c < in.size(); ++c) {
            T saved = in.mutable_values()[c];
            in.mutable_values()[c] = saved + h;
            double fp = static_cast<double>(f(inputs).item());
            in.mutable_values()[c] = saved - h;
            double fm = static_cast<double>(f(inputs).item());
            in.mutable_values()[c] = saved;
            double fd = (fp - fm) / (2.0 * static_cast<double>(h));
            double a = static_cast<double>(analytic[ii][c]);
            double denom = std::max({std::abs(a), std::abs(fd), denom_floor});
            double rel = std::abs(a - fd) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst = "input " + std::to_string(ii) + " @ " + std::to_string(c) +
                            ": analytic=" + std::to_string(a) + ", fd=" + std::to_string(fd);
            }
        }
    }
    return rep;
}

}  // namespace obj2seq
