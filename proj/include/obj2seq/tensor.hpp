#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>

#include "obj2seq/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace obj2seq {

// Install the OBJ2SEQ_THREADS cap on the OpenMP runtime. Call once at startup.
inline void apply_thread_cap() {
#ifdef _OPENMP
    omp_set_num_threads(max_threads());
#endif
}

namespace detail {

template <class T>
struct NodeT {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on demand, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward;

    std::size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// Dense n-d float tensor participating in a dynamic reverse-mode tape.
// Values are immutable once an op has produced the tensor; backward()
// accumulates gradients into every requires_grad tensor reachable from a
// scalar loss.
template <class T>
class TensorT {
    using Node = detail::NodeT<T>;

public:
    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }
    static TensorT filled(std::vector<int> shape, T v, bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(numel(t.node_->shape), v);
        t.node_->requires_grad = requires_grad;
        return t;
    }
    static TensorT from_data(std::vector<int> shape, std::vector<T> data,
                             bool requires_grad = false) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }
    static TensorT scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    std::size_t size() const { return node_->value.size(); }
    int rows() const { return node_->shape.size() == 1 ? 1 : node_->shape[0]; }
    int cols() const { return node_->shape.size() == 1 ? node_->shape[0] : node_->shape[1]; }

    const T* data() const { return node_->value.data(); }
    const std::vector<T>& values() const { return node_->value; }
    // leaf initialization only; never mutate a tensor an op produced
    std::vector<T>& mutable_values() { return node_->value; }

    T item() const {
        if (size() != 1)
            throw ContractError("item() called on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    T at(int i) const { return node_->value[static_cast<size_t>(i)]; }
    T at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad_ref() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Reverse pass from a scalar. Topological order, gradients accumulate.
    void backward() {
        if (size() != 1) throw ContractError("backward() requires a scalar loss tensor");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (Node* n : order) n->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward) n->backward(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    static std::size_t numel(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

    template <class... Parents>
    static TensorT make_op(std::vector<int> shape, std::function<void(Node&)> bw,
                           const Parents&... parents) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.resize(numel(t.node_->shape));
        bool rg = (... || parents.requires_grad());
        t.node_->requires_grad = rg;
        if (rg) {
            (t.node_->parents.push_back(parents.node()), ...);
            t.node_->backward = std::move(bw);
        }
        return t;
    }

    static TensorT make_op_multi(std::vector<int> shape, std::function<void(Node&)> bw,
                                 const std::vector<TensorT>& parents) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.resize(numel(t.node_->shape));
        bool rg = false;
        for (const auto& p : parents) rg = rg || p.requires_grad();
        t.node_->requires_grad = rg;
        if (rg) {
            for (const auto& p : parents) t.node_->parents.push_back(p.node());
            t.node_->backward = std::move(bw);
        }
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

inline int gemm_row_blocks(long m, long n, long k) {
    long work = m * n * k;
    if (work < (1L << 18)) return 1;
    int nt = max_threads();
    long blocks = std::min<long>(nt, (m + 15) / 16);
    return static_cast<int>(std::max<long>(1, blocks));
}

// C (m x n) = opA(A) * opB(B), row-block parallel. Per-element accumulation
// order is fixed by Eigen's kernel, so results are identical across thread
// counts for a given shape.
template <class T>
void gemm(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb) {
    using detail::ECMap;
    using detail::EMap;
    int a_rows = ta ? k : m, a_cols = ta ? m : k;
    int b_rows = tb ? n : k, b_cols = tb ? k : n;
    ECMap<T> A(a, a_rows, a_cols);
    ECMap<T> B(b, b_rows, b_cols);
    int nb = gemm_row_blocks(m, n, k);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nb) if (nb > 1)
#endif
    for (int blk = 0; blk < nb; ++blk) {
        int r0 = static_cast<int>(static_cast<long>(m) * blk / nb);
        int r1 = static_cast<int>(static_cast<long>(m) * (blk + 1) / nb);
        if (r1 <= r0) continue;
        EMap<T> C(c + static_cast<size_t>(r0) * n, r1 - r0, n);
        if (!ta && !tb)
            C.noalias() = A.middleRows(r0, r1 - r0) * B;
        else if (!ta && tb)
            C.noalias() = A.middleRows(r0, r1 - r0) * B.transpose();
        else if (ta && !tb)
            C.noalias() = A.transpose().middleRows(r0, r1 - r0) * B;
        else
            C.noalias() = A.transpose().middleRows(r0, r1 - r0) * B.transpose();
    }
}

template <class T>
void gemm_accumulate(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb) {
    std::vector<T> tmp(static_cast<size_t>(m) * n);
    gemm(a, b, tmp.data(), m, n, k, ta, tb);
    for (size_t i = 0; i < tmp.size(); ++i) c[i] += tmp[i];
}

// Row-stable kernels: every output element is accumulated in ascending-k
// order regardless of which row it sits in, so permuting rows permutes
// results bitwise. Used for the query-side (small m) matmuls where the spec
// asserts permutation equivariance; Eigen's packed kernels do not have this
// property. Large image-side matmuls keep the fast path.
inline constexpr int kRowStableMaxRows = 64;

template <class T>
void gemm_small_nn(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) ci[j] = T(0);
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            T av = ai[kk];
            const T* bk = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

template <class T>
void gemm_small_nt(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<size_t>(j) * k;
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    }
}

template <class T>
void gemm_forward(const T* a, const T* b, T* c, int m, int n, int k, bool ta, bool tb) {
    if (!ta && m <= kRowStableMaxRows) {
        if (!tb)
            gemm_small_nn(a, b, c, m, n, k);
        else
            gemm_small_nt(a, b, c, m, n, k);
        return;
    }
    gemm(a, b, c, m, n, k, ta, tb);
}

}  // namespace detail

// ---- shape helpers ----

template <class T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() == b.shape()) return;
    if (a.size() == 1 && b.size() == 1) return;  // scalars interoperate
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// ---- elementwise binary ----

template <class T, class FwdFn, class BwdFn>
TensorT<T> elementwise_binary(const TensorT<T>& a, const TensorT<T>& b, const char* name,
                              FwdFn fwd, BwdFn bwd) {
    check_same_shape(a, b, name);
    auto an = a.node(), bn = b.node();
    auto out = TensorT<T>::make_op(
        a.shape(),
        [an, bn, bwd](detail::NodeT<T>& self) {
            for (size_t i = 0; i < self.size(); ++i) {
                T da = 0, db = 0;
                bwd(an->value[i], bn->value[i], self.value[i], self.grad[i], da, db);
                if (an->requires_grad) {
                    an->ensure_grad();
                    an->grad[i] += da;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[i] += db;
                }
            }
        },
        a, b);
    auto& v = out.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.data()[i], b.data()[i]);
    return out;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T, T g, T& da, T& db) {
            da = g;
            db = g;
        });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T, T g, T& da, T& db) {
            da = g;
            db = -g;
        });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T, T g, T& da, T& db) {
            da = g * y;
            db = g * x;
        });
}

template <class T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T x, T y, T, T g, T& da, T& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

// subgradient convention at ties: the first argument wins
template <class T>
TensorT<T> elem_min(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "elem_min", [](T x, T y) { return x <= y ? x : y; },
        [](T x, T y, T, T g, T& da, T& db) {
            if (x <= y)
                da = g;
            else
                db = g;
        });
}

template <class T>
TensorT<T> elem_max(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "elem_max", [](T x, T y) { return x >= y ? x : y; },
        [](T x, T y, T, T g, T& da, T& db) {
            if (x >= y)
                da = g;
            else
                db = g;
        });
}

// ---- elementwise unary ----

template <class T, class FwdFn, class BwdFn>
TensorT<T> elementwise_unary(const TensorT<T>& a, FwdFn fwd, BwdFn bwd) {
    auto an = a.node();
    auto out = TensorT<T>::make_op(
        a.shape(),
        [an, bwd](detail::NodeT<T>& self) {
            an->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i)
                an->grad[i] += bwd(an->value[i], self.value[i]) * self.grad[i];
        },
        a);
    auto& v = out.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.data()[i]);
    return out;
}

template <class T>
TensorT<T> neg(const TensorT<T>& a) {
    return elementwise_unary(
        a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    return elementwise_unary(
        a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
TensorT<T> add_const(const TensorT<T>& a, T c) {
    return elementwise_unary(
        a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <class T>
TensorT<T> exp_(const TensorT<T>& a) {
    return elementwise_unary(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
TensorT<T> log_(const TensorT<T>& a) {
    return elementwise_unary(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    return elementwise_unary(
        a,
        [](T x) {
            // numerically safe both directions
            return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                             : std::exp(x) / (T(1) + std::exp(x));
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    return elementwise_unary(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// x^p for x >= 0; callers clamp away from 0 when p < 1
template <class T>
TensorT<T> pow_const(const TensorT<T>& a, T p) {
    return elementwise_unary(
        a, [p](T x) { return std::pow(x, p); },
        [p](T x, T y) { return x == T(0) ? T(0) : p * y / x; });
}

template <class T>
TensorT<T> abs_(const TensorT<T>& a) {
    return elementwise_unary(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// gradient passes only strictly inside the clamp interval
template <class T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    return elementwise_unary(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <class T>
TensorT<T> clamp_min(const TensorT<T>& a, T lo) {
    return elementwise_unary(
        a, [lo](T x) { return std::max(lo, x); },
        [lo](T x, T) { return x >= lo ? T(1) : T(0); });
}

// ---- matmul ----

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool ta = false, bool tb = false) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    int m = ta ? a.dim(1) : a.dim(0);
    int ka = ta ? a.dim(0) : a.dim(1);
    int kb = tb ? b.dim(1) : b.dim(0);
    int n = tb ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (ta ? "^T" : "") + " x " + shape_str(b.shape()) + (tb ? "^T" : ""));
    auto an = a.node(), bn = b.node();
    auto out = TensorT<T>::make_op(
        {m, n},
        [an, bn, m, n, k = ka, ta, tb](detail::NodeT<T>& self) {
            const T* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC * opB(B)^T   (or transposed variant when ta)
                if (!ta)
                    detail::gemm_accumulate(g, bn->value.data(), an->grad.data(), m, k, n,
                                            false, !tb);
                else
                    detail::gemm_accumulate(bn->value.data(), g, an->grad.data(), k, m, n, tb,
                                            true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (!tb)
                    detail::gemm_accumulate(an->value.data(), g, bn->grad.data(), k, n, m, !ta,
                                            false);
                else
                    detail::gemm_accumulate(g, an->value.data(), bn->grad.data(), n, k, m, true,
                                            ta);
            }
        },
        a, b);
    detail::gemm_forward(a.data(), b.data(), out.mutable_values().data(), m, n, ka, ta, tb);
    return out;
}

// Plain A*B with 64-bit accumulation over the inner dimension. Used for the
// probs-times-values product in attention so that forward results are stable
// when the key axis is permuted.
template <class T>
TensorT<T> matmul_mix(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul_mix: inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto an = a.node(), bn = b.node();
    auto out = TensorT<T>::make_op(
        {m, n},
        [an, bn, m, n, k](detail::NodeT<T>& self) {
            const T* g = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                detail::gemm_accumulate(g, bn->value.data(), an->grad.data(), m, k, n, false,
                                        true);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::gemm_accumulate(an->value.data(), g, bn->grad.data(), k, n, m, true,
                                        false);
            }
        },
        a, b);
    const T* av = a.data();
    const T* bv = b.data();
    T* cv = out.mutable_values().data();
    if (m > detail::kRowStableMaxRows) {
        // large mixes sit on axes that are never permuted (image tokens)
        detail::gemm(av, bv, cv, m, n, k, false, false);
        return out;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<long>(m) * n * k > (1L << 18))
#endif
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += static_cast<double>(av[static_cast<size_t>(i) * k + kk]) *
                       static_cast<double>(bv[static_cast<size_t>(kk) * n + j]);
            cv[static_cast<size_t>(i) * n + j] = static_cast<T>(acc);
        }
    }
    return out;
}

// ---- broadcast helpers ----

// matrix + row vector (bias)
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& m, const TensorT<T>& v) {
    if (m.shape().size() != 2 || v.size() != static_cast<size_t>(m.dim(1)))
        throw ShapeError("add_rowvec: " + shape_str(m.shape()) + " + " + shape_str(v.shape()));
    int rows = m.dim(0), cols = m.dim(1);
    auto mn = m.node(), vn = v.node();
    auto out = TensorT<T>::make_op(
        {rows, cols},
        [mn, vn, rows, cols](detail::NodeT<T>& self) {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (size_t i = 0; i < self.size(); ++i) mn->grad[i] += self.grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c)
                        vn->grad[c] += self.grad[static_cast<size_t>(r) * cols + c];
            }
        },
        m, v);
    auto& o = out.mutable_values();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            o[static_cast<size_t>(r) * cols + c] = m.data()[static_cast<size_t>(r) * cols + c] +
                                                   v.data()[c];
    return out;
}

// scale each row of m by the corresponding entry of column vector v [rows x 1]
template <class T>
TensorT<T> scale_rows(const TensorT<T>& m, const TensorT<T>& v) {
    if (m.shape().size() != 2 || v.size() != static_cast<size_t>(m.dim(0)))
        throw ShapeError("scale_rows: " + shape_str(m.shape()) + " by " + shape_str(v.shape()));
    int rows = m.dim(0), cols = m.dim(1);
    auto mn = m.node(), vn = v.node();
    auto out = TensorT<T>::make_op(
        {rows, cols},
        [mn, vn, rows, cols](detail::NodeT<T>& self) {
            for (int r = 0; r < rows; ++r) {
                double dv = 0.0;
                for (int c = 0; c < cols; ++c) {
                    size_t i = static_cast<size_t>(r) * cols + c;
                    if (mn->requires_grad) {
                        mn->ensure_grad();
                        mn->grad[i] += self.grad[i] * vn->value[r];
                    }
                    dv += static_cast<double>(self.grad[i]) * mn->value[i];
                }
                if (vn->requires_grad) {
                    vn->ensure_grad();
                    vn->grad[r] += static_cast<T>(dv);
                }
            }
        },
        m, v);
    auto& o = out.mutable_values();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            o[static_cast<size_t>(r) * cols + c] =
                m.data()[static_cast<size_t>(r) * cols + c] * v.data()[r];
    return out;
}

// ---- rows / slicing / concat ----

template <class T>
TensorT<T> row(const TensorT<T>& m, int r) {
    if (m.shape().size() != 2 || r < 0 || r >= m.dim(0))
        throw ShapeError("row: index " + std::to_string(r) + " out of " + shape_str(m.shape()));
    int cols = m.dim(1);
    auto mn = m.node();
    auto out = TensorT<T>::make_op(
        {1, cols},
        [mn, r, cols](detail::NodeT<T>& self) {
            mn->ensure_grad();
            for (int c = 0; c < cols; ++c)
                mn->grad[static_cast<size_t>(r) * cols + c] += self.grad[c];
        },
        m);
    std::copy_n(m.data() + static_cast<size_t>(r) * cols, cols, out.mutable_values().begin());
    return out;
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& m, std::vector<int> idx) {
    if (m.shape().size() != 2) throw ShapeError("gather_rows: expects 2-d tensor");
    int cols = m.dim(1);
    for (int i : idx)
        if (i < 0 || i >= m.dim(0))
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                             shape_str(m.shape()));
    auto mn = m.node();
    int rows = static_cast<int>(idx.size());
    auto out = TensorT<T>::make_op(
        {rows, cols},
        [mn, idx, cols](detail::NodeT<T>& self) {
            mn->ensure_grad();
            for (size_t r = 0; r < idx.size(); ++r)
                for (int c = 0; c < cols; ++c)
                    mn->grad[static_cast<size_t>(idx[r]) * cols + c] +=
                        self.grad[r * cols + c];
        },
        m);
    auto& o = out.mutable_values();
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(m.data() + static_cast<size_t>(idx[r]) * cols, cols, o.begin() + r * cols);
    return out;
}

// scalar view of one element (flat index), shape {1}
template <class T>
TensorT<T> elem(const TensorT<T>& x, int flat_index) {
    if (flat_index < 0 || static_cast<size_t>(flat_index) >= x.size())
        throw ShapeError("elem: index " + std::to_string(flat_index) + " out of " +
                         shape_str(x.shape()));
    auto xn = x.node();
    auto out = TensorT<T>::make_op(
        {1},
        [xn, flat_index](detail::NodeT<T>& self) {
            xn->ensure_grad();
            xn->grad[flat_index] += self.grad[0];
        },
        x);
    out.mutable_values()[0] = x.data()[flat_index];
    return out;
}

// one column of a 2-d tensor as [rows x 1]
template <class T>
TensorT<T> col(const TensorT<T>& m, int c) {
    if (m.shape().size() != 2 || c < 0 || c >= m.dim(1))
        throw ShapeError("col: index " + std::to_string(c) + " out of " + shape_str(m.shape()));
    int rows = m.dim(0), cols = m.dim(1);
    auto mn = m.node();
    auto out = TensorT<T>::make_op(
        {rows, 1},
        [mn, c, rows, cols](detail::NodeT<T>& self) {
            mn->ensure_grad();
            for (int r = 0; r < rows; ++r)
                mn->grad[static_cast<size_t>(r) * cols + c] += self.grad[r];
        },
        m);
    auto& o = out.mutable_values();
    for (int r = 0; r < rows; ++r) o[r] = m.data()[static_cast<size_t>(r) * cols + c];
    return out;
}

template <class T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    int cols = parts[0].cols();
    int rows = 0;
    std::vector<size_t> sizes;
    for (const auto& p : parts) {
        if (p.shape().size() != 2 || p.dim(1) != cols)
            throw ShapeError("concat_rows: column mismatch");
        rows += p.dim(0);
        sizes.push_back(p.size());
    }
    std::vector<std::shared_ptr<detail::NodeT<T>>> ps;
    for (const auto& p : parts) ps.push_back(p.node());
    auto out = TensorT<T>::make_op_multi(
        {rows, cols},
        [ps, sizes](detail::NodeT<T>& self) {
            size_t off = 0;
            for (size_t pi = 0; pi < ps.size(); ++pi) {
                if (ps[pi]->requires_grad) {
                    ps[pi]->ensure_grad();
                    for (size_t i = 0; i < sizes[pi]; ++i)
                        ps[pi]->grad[i] += self.grad[off + i];
                }
                off += sizes[pi];
            }
        },
        parts);
    size_t off = 0;
    auto& o = out.mutable_values();
    for (const auto& p : parts) {
        std::copy_n(p.data(), p.size(), o.begin() + off);
        off += p.size();
    }
    return out;
}

// column vectors [rows x 1] side by side into [rows x n]
template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    int rows = parts[0].dim(0);
    for (const auto& p : parts)
        if (p.shape().size() != 2 || p.dim(1) != 1 || p.dim(0) != rows)
            throw ShapeError("concat_cols: expects matching [n x 1] columns");
    int n = static_cast<int>(parts.size());
    std::vector<std::shared_ptr<detail::NodeT<T>>> ps;
    for (const auto& p : parts) ps.push_back(p.node());
    auto out = TensorT<T>::make_op_multi(
        {rows, n},
        [ps, rows, n](detail::NodeT<T>& self) {
            for (int c = 0; c < n; ++c) {
                if (!ps[c]->requires_grad) continue;
                ps[c]->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    ps[c]->grad[r] += self.grad[static_cast<size_t>(r) * n + c];
            }
        },
        parts);
    auto& o = out.mutable_values();
    for (int c = 0; c < n; ++c)
        for (int r = 0; r < rows; ++r) o[static_cast<size_t>(r) * n + c] = parts[c].data()[r];
    return out;
}

// ---- reductions ----

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    auto an = a.node();
    auto out = TensorT<T>::make_op(
        {1},
        [an](detail::NodeT<T>& self) {
            an->ensure_grad();
            for (size_t i = 0; i < an->value.size(); ++i) an->grad[i] += self.grad[0];
        },
        a);
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a.data()[i]);
    out.mutable_values()[0] = static_cast<T>(acc);
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// c_r = sum_k a_rk * b_rk, output [rows x 1]
template <class T>
TensorT<T> rowwise_dot(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "rowwise_dot");
    if (a.shape().size() != 2) throw ShapeError("rowwise_dot: expects 2-d tensors");
    int rows = a.dim(0), cols = a.dim(1);
    auto an = a.node(), bn = b.node();
    auto out = TensorT<T>::make_op(
        {rows, 1},
        [an, bn, rows, cols](detail::NodeT<T>& self) {
            for (int r = 0; r < rows; ++r) {
                T g = self.grad[r];
                for (int c = 0; c < cols; ++c) {
                    size_t i = static_cast<size_t>(r) * cols + c;
                    if (an->requires_grad) {
                        an->ensure_grad();
                        an->grad[i] += g * bn->value[i];
                    }
                    if (bn->requires_grad) {
                        bn->ensure_grad();
                        bn->grad[i] += g * an->value[i];
                    }
                }
            }
        },
        a, b);
    auto& o = out.mutable_values();
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < cols; ++c)
            acc += static_cast<double>(a.data()[static_cast<size_t>(r) * cols + c]) *
                   static_cast<double>(b.data()[static_cast<size_t>(r) * cols + c]);
        o[r] = static_cast<T>(acc);
    }
    return out;
}

// ---- softmax / layernorm ----

// Stable softmax along `axis` of a 1-d or 2-d tensor. The normalizer is
// accumulated in 64-bit so results do not depend on element order along the
// reduced axis beyond true value changes.
template <class T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
    const auto& sh = x.shape();
    if (sh.size() > 2) throw ShapeError("softmax: expects 1-d or 2-d tensor");
    int rows = sh.size() == 1 ? 1 : sh[0];
    int cols = sh.size() == 1 ? sh[0] : sh[1];
    int eff_axis = sh.size() == 1 ? axis + 1 : axis;
    if (eff_axis != 0 && eff_axis != 1)
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(sh));
    for (size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x.data()[i]))
            throw NumericError("softmax: non-finite input at flat index " + std::to_string(i));
    bool along_cols = (eff_axis == 1);
    int outer = along_cols ? rows : cols;
    int inner = along_cols ? cols : rows;
    auto stride = [along_cols, cols](int o, int i) -> size_t {
        return along_cols ? static_cast<size_t>(o) * cols + i
                          : static_cast<size_t>(i) * cols + o;
    };
    auto xn = x.node();
    auto out = TensorT<T>::make_op(
        sh,
        [xn, outer, inner, stride](detail::NodeT<T>& self) {
            xn->ensure_grad();
            for (int o = 0; o < outer; ++o) {
                double dot = 0.0;
                for (int i = 0; i < inner; ++i) {
                    size_t ix = stride(o, i);
                    dot += static_cast<double>(self.grad[ix]) * self.value[ix];
                }
                for (int i = 0; i < inner; ++i) {
                    size_t ix = stride(o, i);
                    xn->grad[ix] += self.value[ix] * (self.grad[ix] - static_cast<T>(dot));
                }
            }
        },
        x);
    auto& o = out.mutable_values();
    for (int oo = 0; oo < outer; ++oo) {
        T mx = x.data()[stride(oo, 0)];
        for (int i = 1; i < inner; ++i) mx = std::max(mx, x.data()[stride(oo, i)]);
        double denom = 0.0;
        for (int i = 0; i < inner; ++i) {
            T e = std::exp(x.data()[stride(oo, i)] - mx);
            o[stride(oo, i)] = e;
            denom += static_cast<double>(e);
        }
        for (int i = 0; i < inner; ++i)
            o[stride(oo, i)] = static_cast<T>(o[stride(oo, i)] / denom);
    }
    return out;
}

// Row-wise layer normalization with affine parameters over the last axis.
template <class T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     T eps = T(1e-5)) {
    if (x.shape().size() != 2) throw ShapeError("layernorm: expects 2-d tensor");
    int rows = x.dim(0), cols = x.dim(1);
    if (gamma.size() != static_cast<size_t>(cols) || beta.size() != static_cast<size_t>(cols))
        throw ShapeError("layernorm: gamma/beta width mismatch");
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    // cache normalized values and inv-std per row for the backward pass
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto istd = std::make_shared<std::vector<T>>(rows);
    auto out = TensorT<T>::make_op(
        x.shape(),
        [xn, gn, bn, xhat, istd, rows, cols](detail::NodeT<T>& self) {
            for (int r = 0; r < rows; ++r) {
                const size_t base = static_cast<size_t>(r) * cols;
                double sum_gdy = 0.0, sum_gdy_xhat = 0.0;
                for (int c = 0; c < cols; ++c) {
                    double gdy = static_cast<double>(gn->value[c]) * self.grad[base + c];
                    sum_gdy += gdy;
                    sum_gdy_xhat += gdy * (*xhat)[base + c];
                }
                double inv_n = 1.0 / cols;
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (int c = 0; c < cols; ++c) {
                        double gdy = static_cast<double>(gn->value[c]) * self.grad[base + c];
                        double dx = ((*istd)[r]) *
                                    (gdy - inv_n * sum_gdy -
                                     (*xhat)[base + c] * inv_n * sum_gdy_xhat);
                        xn->grad[base + c] += static_cast<T>(dx);
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (int c = 0; c < cols; ++c)
                        gn->grad[c] += self.grad[base + c] * (*xhat)[base + c];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int c = 0; c < cols; ++c) bn->grad[c] += self.grad[base + c];
                }
            }
        },
        x, gamma, beta);
    auto& o = out.mutable_values();
    for (int r = 0; r < rows; ++r) {
        const size_t base = static_cast<size_t>(r) * cols;
        double m = 0.0;
        for (int c = 0; c < cols; ++c) m += x.data()[base + c];
        m /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            double d = x.data()[base + c] - m;
            var += d * d;
        }
        var /= cols;
        T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*istd)[r] = is;
        for (int c = 0; c < cols; ++c) {
            T xh = static_cast<T>((x.data()[base + c] - m)) * is;
            (*xhat)[base + c] = xh;
            o[base + c] = gamma.data()[c] * xh + beta.data()[c];
        }
    }
    return out;
}

// ---- composites ----

template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_rowvec(matmul(x, w), b);
}

// Scaled dot-product attention, single head: softmax(q k^T / sqrt(d)) v.
template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2 ||
        q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        throw ShapeError("attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    T s = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
    auto logits = scale(matmul(q, k, false, true), s);
    auto probs = softmax(logits, 1);
    return matmul_mix(probs, v);
}

}  // namespace obj2seq
