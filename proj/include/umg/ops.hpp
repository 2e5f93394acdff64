#pragma once

#include "umg/tensor.hpp"

#include <algorithm>
#include <array>
#include <cblas.h>
#include <cmath>
#include <cstring>

namespace umg {
namespace detail {

inline void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
                 const float* A, int64_t lda, const float* B, int64_t ldb, float beta,
                 float* C, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
                static_cast<int>(lda), B, static_cast<int>(ldb), beta, C, static_cast<int>(ldc));
}
inline void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, double alpha,
                 const double* A, int64_t lda, const double* B, int64_t ldb, double beta,
                 double* C, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), alpha, A,
                static_cast<int>(lda), B, static_cast<int>(ldb), beta, C, static_cast<int>(ldc));
}

template <typename T>
bool record(Tape<T>* tape, const Tensor<T>& out, std::initializer_list<bool> tracked) {
    if (!tape) return false;
    bool any = false;
    for (bool t : tracked) any = any || t;
    if (any) out.impl()->from_op = true;
    return any;
}

template <typename T>
std::vector<T>* grad_of(const std::shared_ptr<TensorImpl<T>>& impl, bool tracked) {
    if (!tracked) return nullptr;
    impl->ensure_grad();
    return &impl->grad;
}

template <typename T>
bool has_out_grad(const std::shared_ptr<TensorImpl<T>>& out) {
    return !out->grad.empty();
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

// b must have the same shape as a, or a shape that is a suffix of a's (it is
// then broadcast over the leading dimensions), or be a scalar.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t na = a.size(), nb = b.size();
    bool suffix = b.ndim() <= a.ndim() &&
                  std::equal(b.shape().begin(), b.shape().end(),
                             a.shape().end() - b.ndim());
    if (!suffix && nb != 1)
        throw ShapeError("add: shape " + shape_str(b.shape()) + " is not broadcastable to " +
                         shape_str(a.shape()));
    std::vector<T> out(static_cast<size_t>(na));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    if (nb == 1) {
        const T c = pb[0];
        for (int64_t i = 0; i < na; ++i) out[static_cast<size_t>(i)] = pa[i] + c;
    } else {
        for (int64_t i = 0; i < na; ++i) out[static_cast<size_t>(i)] = pa[i] + pb[i % nb];
    }
    check_finite("add", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked(), b.tracked()})) {
        auto ai = a.impl(), bi = b.impl(), oi = o.impl();
        bool ta = a.tracked(), tb = b.tracked();
        tape->push([ai, bi, oi, ta, tb, na, nb]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            if (auto* ga = detail::grad_of(ai, ta))
                for (int64_t i = 0; i < na; ++i) (*ga)[static_cast<size_t>(i)] += g[i];
            if (auto* gb = detail::grad_of(bi, tb))
                for (int64_t i = 0; i < na; ++i) (*gb)[static_cast<size_t>(i % nb)] += g[i];
        });
    }
    return o;
}

// Elementwise product; b may also be a scalar or a trailing-dimensions
// (suffix) broadcast like add.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t na = a.size(), nb = b.size();
    bool suffix = b.ndim() <= a.ndim() &&
                  std::equal(b.shape().begin(), b.shape().end(),
                             a.shape().end() - b.ndim());
    if (!suffix && nb != 1)
        throw ShapeError("mul: shape " + shape_str(b.shape()) + " is not broadcastable to " +
                         shape_str(a.shape()));
    std::vector<T> out(static_cast<size_t>(na));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (int64_t i = 0; i < na; ++i) out[static_cast<size_t>(i)] = pa[i] * pb[nb == 1 ? 0 : i % nb];
    check_finite("mul", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked(), b.tracked()})) {
        auto ai = a.impl(), bi = b.impl(), oi = o.impl();
        bool ta = a.tracked(), tb = b.tracked();
        tape->push([ai, bi, oi, ta, tb, na, nb]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            const T* pa = ai->data.data();
            const T* pb = bi->data.data();
            if (auto* ga = detail::grad_of(ai, ta))
                for (int64_t i = 0; i < na; ++i)
                    (*ga)[static_cast<size_t>(i)] += g[i] * pb[nb == 1 ? 0 : i % nb];
            if (auto* gb = detail::grad_of(bi, tb)) {
                if (nb == 1) {
                    double acc = 0;
                    for (int64_t i = 0; i < na; ++i)
                        acc += static_cast<double>(g[i]) * static_cast<double>(pa[i]);
                    (*gb)[0] += static_cast<T>(acc);
                } else {
                    for (int64_t i = 0; i < na; ++i)
                        (*gb)[static_cast<size_t>(i % nb)] += g[i] * pa[i];
                }
            }
        });
    }
    return o;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
    const int64_t n = a.size();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<T>(pa[i] * c);
    check_finite("scale", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, c, n]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            auto* ga = detail::grad_of(ai, true);
            for (int64_t i = 0; i < n; ++i)
                (*ga)[static_cast<size_t>(i)] += static_cast<T>(g[i] * c);
        });
    }
    return o;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, -1.0));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    std::vector<T> out(static_cast<size_t>(M * N));
    detail::gemm(false, false, M, N, K, T(1), a.data().data(), K, b.data().data(), N, T(0),
                 out.data(), N);
    check_finite("matmul", out);
    Tensor<T> o(Shape{M, N}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked(), b.tracked()})) {
        auto ai = a.impl(), bi = b.impl(), oi = o.impl();
        bool ta = a.tracked(), tb = b.tracked();
        tape->push([ai, bi, oi, ta, tb, M, K, N]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            if (auto* ga = detail::grad_of(ai, ta))
                detail::gemm(false, true, M, K, N, T(1), g, N, bi->data.data(), N, T(1),
                             ga->data(), K);
            if (auto* gb = detail::grad_of(bi, tb))
                detail::gemm(true, false, K, N, M, T(1), ai->data.data(), K, g, N, T(1),
                             gb->data(), N);
        });
    }
    return o;
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    std::vector<T> out(static_cast<size_t>(B * M * N));
    for (int64_t i = 0; i < B; ++i)
        detail::gemm(false, false, M, N, K, T(1), a.data().data() + i * M * K, K,
                     b.data().data() + i * K * N, N, T(0), out.data() + i * M * N, N);
    check_finite("bmm", out);
    Tensor<T> o(Shape{B, M, N}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked(), b.tracked()})) {
        auto ai = a.impl(), bi = b.impl(), oi = o.impl();
        bool ta = a.tracked(), tb = b.tracked();
        tape->push([ai, bi, oi, ta, tb, B, M, K, N]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            if (auto* ga = detail::grad_of(ai, ta))
                for (int64_t i = 0; i < B; ++i)
                    detail::gemm(false, true, M, K, N, T(1), g + i * M * N, N,
                                 bi->data.data() + i * K * N, N, T(1), ga->data() + i * M * K, K);
            if (auto* gb = detail::grad_of(bi, tb))
                for (int64_t i = 0; i < B; ++i)
                    detail::gemm(true, false, K, N, M, T(1), ai->data.data() + i * M * K, K,
                                 g + i * M * N, N, T(1), gb->data() + i * K * N, N);
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    Tensor<T> o(std::move(shape), a.data());
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += oi->grad[i];
        });
    }
    return o;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
    const int nd = a.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw ShapeError("permute: order has wrong rank for " + shape_str(a.shape()));
    Shape oshape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) oshape[static_cast<size_t>(i)] = a.dim(perm[static_cast<size_t>(i)]);
    std::vector<int64_t> istride(static_cast<size_t>(nd), 1), ostride(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i)
        istride[static_cast<size_t>(i)] = istride[static_cast<size_t>(i + 1)] * a.dim(i + 1);
    for (int i = nd - 2; i >= 0; --i)
        ostride[static_cast<size_t>(i)] = ostride[static_cast<size_t>(i + 1)] * oshape[static_cast<size_t>(i + 1)];
    const int64_t n = a.size();
    // flat output index -> flat input index map, reused by backward
    auto src_index = [nd, &perm, oshape, ostride, istride](int64_t oidx) {
        int64_t iidx = 0, rem = oidx;
        for (int i = 0; i < nd; ++i) {
            int64_t c = rem / ostride[static_cast<size_t>(i)];
            rem -= c * ostride[static_cast<size_t>(i)];
            iidx += c * istride[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        }
        return iidx;
    };
    std::vector<int64_t> map(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) map[static_cast<size_t>(i)] = src_index(i);
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = pa[map[static_cast<size_t>(i)]];
    Tensor<T> o(std::move(oshape), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto m = std::make_shared<std::vector<int64_t>>(std::move(map));
        tape->push([ai, oi, m, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i)
                (*ga)[static_cast<size_t>((*m)[static_cast<size_t>(i)])] += g[i];
        });
    }
    return o;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects a 2-d tensor, got " + shape_str(a.shape()));
    return permute(a, {1, 0});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis");
    Shape oshape = parts[0].shape();
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && p.dim(i) != oshape[static_cast<size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        axis_total += p.dim(axis);
    }
    oshape[static_cast<size_t>(axis)] = axis_total;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= oshape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= oshape[static_cast<size_t>(i)];
    std::vector<T> out(static_cast<size_t>(numel(oshape)));
    const int64_t orow = axis_total * inner;
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t prow = p.dim(axis) * inner;
        for (int64_t r = 0; r < outer; ++r)
            std::memcpy(out.data() + r * orow + off, p.data().data() + r * prow,
                        static_cast<size_t>(prow) * sizeof(T));
        off += prow;
    }
    Tensor<T> o(std::move(oshape), std::move(out));
    auto* tape = Tape<T>::active();
    std::vector<bool> tracked;
    bool any = false;
    for (const auto& p : parts) {
        tracked.push_back(p.tracked());
        any = any || p.tracked();
    }
    if (tape && any) {
        o.impl()->from_op = true;
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        std::vector<int64_t> rows;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            rows.push_back(p.dim(axis) * inner);
        }
        auto oi = o.impl();
        tape->push([impls, rows, tracked, oi, outer, orow]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            int64_t off = 0;
            for (size_t k = 0; k < impls.size(); ++k) {
                if (auto* gp = detail::grad_of(impls[k], tracked[k]))
                    for (int64_t r = 0; r < outer; ++r)
                        for (int64_t j = 0; j < rows[k]; ++j)
                            (*gp)[static_cast<size_t>(r * rows[k] + j)] += g[r * orow + off + j];
                off += rows[k];
            }
        });
    }
    return o;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    const int nd = a.ndim();
    if (axis < 0 || axis >= nd || start < 0 || len <= 0 || start + len > a.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(a.shape()));
    Shape oshape = a.shape();
    oshape[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
    const int64_t irow = a.dim(axis) * inner, orow = len * inner;
    std::vector<T> out(static_cast<size_t>(outer * orow));
    for (int64_t r = 0; r < outer; ++r)
        std::memcpy(out.data() + r * orow, a.data().data() + r * irow + start * inner,
                    static_cast<size_t>(orow) * sizeof(T));
    Tensor<T> o(std::move(oshape), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, outer, irow, orow, start, inner]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* g = oi->grad.data();
            for (int64_t r = 0; r < outer; ++r)
                for (int64_t j = 0; j < orow; ++j)
                    (*ga)[static_cast<size_t>(r * irow + start * inner + j)] += g[r * orow + j];
        });
    }
    return o;
}

// Flat-index gather: out[i] = a.flat[idx[i]]. Backward scatter-adds.
template <typename T>
Tensor<T> take(const Tensor<T>& a, const std::vector<int64_t>& idx, Shape oshape) {
    if (static_cast<int64_t>(idx.size()) != numel(oshape))
        throw ShapeError("take: index count does not match output shape " + shape_str(oshape));
    const int64_t n = a.size();
    std::vector<T> out(idx.size());
    const T* pa = a.data().data();
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= n)
            throw ContractError("take: index " + std::to_string(idx[i]) + " out of range");
        out[i] = pa[idx[i]];
    }
    Tensor<T> o(std::move(oshape), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto m = std::make_shared<std::vector<int64_t>>(idx);
        tape->push([ai, oi, m]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (size_t i = 0; i < m->size(); ++i)
                (*ga)[static_cast<size_t>((*m)[i])] += oi->grad[i];
        });
    }
    return o;
}

// Row gather on a 2-d tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& rows) {
    if (a.ndim() != 2) throw ShapeError("gather_rows: expects 2-d input, got " + shape_str(a.shape()));
    const int64_t R = a.dim(0), C = a.dim(1);
    std::vector<T> out(rows.size() * static_cast<size_t>(C));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= R)
            throw ContractError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
        std::memcpy(out.data() + i * static_cast<size_t>(C), a.data().data() + rows[i] * C,
                    static_cast<size_t>(C) * sizeof(T));
    }
    Tensor<T> o(Shape{static_cast<int64_t>(rows.size()), C}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto m = std::make_shared<std::vector<int64_t>>(rows);
        tape->push([ai, oi, m, C]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* g = oi->grad.data();
            for (size_t i = 0; i < m->size(); ++i)
                for (int64_t j = 0; j < C; ++j)
                    (*ga)[static_cast<size_t>((*m)[i] * C + j)] += g[static_cast<int64_t>(i) * C + j];
        });
    }
    return o;
}

// Per-segment mean of rows: a is [n,d], assignment maps each row to [0,k).
// Accumulates in double so that a segment of identical rows reproduces the
// row value exactly in f32.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& a, const std::vector<int>& assignment, int64_t k) {
    if (a.ndim() != 2 || static_cast<int64_t>(assignment.size()) != a.dim(0))
        throw ShapeError("segment_mean: assignment length does not match rows of " +
                         shape_str(a.shape()));
    const int64_t n = a.dim(0), d = a.dim(1);
    std::vector<double> acc(static_cast<size_t>(k * d), 0.0);
    std::vector<int64_t> count(static_cast<size_t>(k), 0);
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i) {
        int s = assignment[static_cast<size_t>(i)];
        if (s < 0 || s >= k) throw ContractError("segment_mean: segment id out of range");
        ++count[static_cast<size_t>(s)];
        for (int64_t j = 0; j < d; ++j)
            acc[static_cast<size_t>(s * d + j)] += static_cast<double>(pa[i * d + j]);
    }
    std::vector<T> out(static_cast<size_t>(k * d), T(0));
    for (int64_t s = 0; s < k; ++s) {
        if (count[static_cast<size_t>(s)] == 0)
            throw ContractError("segment_mean: empty segment " + std::to_string(s));
        for (int64_t j = 0; j < d; ++j)
            out[static_cast<size_t>(s * d + j)] =
                static_cast<T>(acc[static_cast<size_t>(s * d + j)] /
                               static_cast<double>(count[static_cast<size_t>(s)]));
    }
    check_finite("segment_mean", out);
    Tensor<T> o(Shape{k, d}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto asg = std::make_shared<std::vector<int>>(assignment);
        auto cnt = std::make_shared<std::vector<int64_t>>(std::move(count));
        tape->push([ai, oi, asg, cnt, n, d]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                int s = (*asg)[static_cast<size_t>(i)];
                const T inv = static_cast<T>(1.0 / static_cast<double>((*cnt)[static_cast<size_t>(s)]));
                for (int64_t j = 0; j < d; ++j)
                    (*ga)[static_cast<size_t>(i * d + j)] += g[s * d + j] * inv;
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    Tensor<T> o = Tensor<T>::scalar(static_cast<T>(acc));
    check_finite("reduce_sum", o.data());
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T g = oi->grad[0];
            for (T& v : *ga) v += g;
        });
    }
    return o;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
    const int64_t n = a.size();
    double acc = 0;
    for (T v : a.data()) acc += static_cast<double>(v);
    Tensor<T> o = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    check_finite("reduce_mean", o.data());
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T g = static_cast<T>(static_cast<double>(oi->grad[0]) / static_cast<double>(n));
            for (T& v : *ga) v += g;
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// row-wise ops over the last axis
// ---------------------------------------------------------------------------

// Max-shifted softmax along the last axis.
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
    if (a.ndim() == 0) throw ShapeError("softmax: scalar input");
    const int64_t d = a.dim(a.ndim() - 1), rows = a.size() / d;
    std::vector<T> out(static_cast<size_t>(a.size()));
    const T* pa = a.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = pa + r * d;
        T* y = out.data() + r * d;
        double mx = static_cast<double>(x[0]);
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(x[j]));
        double z = 0;
        for (int64_t j = 0; j < d; ++j) {
            double e = std::exp(static_cast<double>(x[j]) - mx);
            y[j] = static_cast<T>(e);
            z += e;
        }
        const double inv = 1.0 / z;
        for (int64_t j = 0; j < d; ++j) y[j] = static_cast<T>(static_cast<double>(y[j]) * inv);
    }
    check_finite("softmax", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, rows, d]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = oi->data.data() + r * d;
                const T* g = oi->grad.data() + r * d;
                double dot = 0;
                for (int64_t j = 0; j < d; ++j)
                    dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                for (int64_t j = 0; j < d; ++j)
                    (*ga)[static_cast<size_t>(r * d + j)] +=
                        static_cast<T>((static_cast<double>(g[j]) - dot) * static_cast<double>(y[j]));
            }
        });
    }
    return o;
}

// log(sum(exp(x))) along the last axis, max-shifted. Output drops the axis.
template <typename T>
Tensor<T> logsumexp_last(const Tensor<T>& a) {
    if (a.ndim() == 0) throw ShapeError("logsumexp: scalar input");
    const int64_t d = a.dim(a.ndim() - 1), rows = a.size() / d;
    Shape oshape(a.shape().begin(), a.shape().end() - 1);
    std::vector<T> out(static_cast<size_t>(rows));
    const T* pa = a.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = pa + r * d;
        double mx = static_cast<double>(x[0]);
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, static_cast<double>(x[j]));
        double z = 0;
        for (int64_t j = 0; j < d; ++j) z += std::exp(static_cast<double>(x[j]) - mx);
        out[static_cast<size_t>(r)] = static_cast<T>(mx + std::log(z));
    }
    check_finite("logsumexp", out);
    Tensor<T> o(std::move(oshape), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, rows, d]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (int64_t r = 0; r < rows; ++r) {
                const T* x = ai->data.data() + r * d;
                const double lse = static_cast<double>(oi->data[static_cast<size_t>(r)]);
                const double g = static_cast<double>(oi->grad[static_cast<size_t>(r)]);
                for (int64_t j = 0; j < d; ++j)
                    (*ga)[static_cast<size_t>(r * d + j)] +=
                        static_cast<T>(g * std::exp(static_cast<double>(x[j]) - lse));
            }
        });
    }
    return o;
}

// Normalization over the last axis, no affine part.
template <typename T>
Tensor<T> layer_norm_last(const Tensor<T>& a, double eps = 1e-5) {
    if (a.ndim() == 0) throw ShapeError("layer_norm: scalar input");
    const int64_t d = a.dim(a.ndim() - 1), rows = a.size() / d;
    std::vector<T> out(static_cast<size_t>(a.size()));
    std::vector<double> inv_sigma(static_cast<size_t>(rows));
    const T* pa = a.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = pa + r * d;
        double mu = 0;
        for (int64_t j = 0; j < d; ++j) mu += static_cast<double>(x[j]);
        mu /= static_cast<double>(d);
        double var = 0;
        for (int64_t j = 0; j < d; ++j) {
            double c = static_cast<double>(x[j]) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < d; ++j)
            out[static_cast<size_t>(r * d + j)] = static_cast<T>((static_cast<double>(x[j]) - mu) * is);
    }
    check_finite("layer_norm", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
        tape->push([ai, oi, is, rows, d]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = oi->data.data() + r * d;
                const T* g = oi->grad.data() + r * d;
                double mg = 0, mgy = 0;
                for (int64_t j = 0; j < d; ++j) {
                    mg += static_cast<double>(g[j]);
                    mgy += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                }
                mg /= static_cast<double>(d);
                mgy /= static_cast<double>(d);
                const double s = (*is)[static_cast<size_t>(r)];
                for (int64_t j = 0; j < d; ++j)
                    (*ga)[static_cast<size_t>(r * d + j)] += static_cast<T>(
                        s * (static_cast<double>(g[j]) - mg - static_cast<double>(y[j]) * mgy));
            }
        });
    }
    return o;
}

// Unit-normalizes each row (last axis). A zero row is an error.
template <typename T>
Tensor<T> l2_normalize_last(const Tensor<T>& a) {
    if (a.ndim() == 0) throw ShapeError("l2_normalize: scalar input");
    const int64_t d = a.dim(a.ndim() - 1), rows = a.size() / d;
    std::vector<T> out(static_cast<size_t>(a.size()));
    std::vector<double> inv_norm(static_cast<size_t>(rows));
    const T* pa = a.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* x = pa + r * d;
        double nrm = 0;
        for (int64_t j = 0; j < d; ++j)
            nrm += static_cast<double>(x[j]) * static_cast<double>(x[j]);
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) throw NumericError("l2_normalize: zero vector at row " + std::to_string(r));
        const double inv = 1.0 / nrm;
        inv_norm[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j)
            out[static_cast<size_t>(r * d + j)] = static_cast<T>(static_cast<double>(x[j]) * inv);
    }
    check_finite("l2_normalize", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        auto in = std::make_shared<std::vector<double>>(std::move(inv_norm));
        tape->push([ai, oi, in, rows, d]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = oi->data.data() + r * d;
                const T* g = oi->grad.data() + r * d;
                double dot = 0;
                for (int64_t j = 0; j < d; ++j)
                    dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                const double inv = (*in)[static_cast<size_t>(r)];
                for (int64_t j = 0; j < d; ++j)
                    (*ga)[static_cast<size_t>(r * d + j)] += static_cast<T>(
                        inv * (static_cast<double>(g[j]) - dot * static_cast<double>(y[j])));
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {
inline double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}
} // namespace detail

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const int64_t n = a.size();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = static_cast<T>(detail::gelu_val(static_cast<double>(pa[i])));
    check_finite("gelu", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* x = ai->data.data();
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i)
                (*ga)[static_cast<size_t>(i)] += static_cast<T>(
                    static_cast<double>(g[i]) * detail::gelu_grad(static_cast<double>(x[i])));
        });
    }
    return o;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
    const int64_t n = a.size();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = static_cast<T>(std::log(static_cast<double>(pa[i])));
    check_finite("log", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* x = ai->data.data();
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i)
                (*ga)[static_cast<size_t>(i)] += static_cast<T>(static_cast<double>(g[i]) /
                                                                static_cast<double>(x[i]));
        });
    }
    return o;
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
    const int64_t n = a.size();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = static_cast<T>(std::exp(static_cast<double>(pa[i])));
    check_finite("exp", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* y = oi->data.data();
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i)
                (*ga)[static_cast<size_t>(i)] += g[i] * y[i];
        });
    }
    return o;
}

// Elementwise smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& a) {
    const int64_t n = a.size();
    std::vector<T> out(static_cast<size_t>(n));
    const T* pa = a.data().data();
    for (int64_t i = 0; i < n; ++i) {
        double x = static_cast<double>(pa[i]);
        out[static_cast<size_t>(i)] =
            static_cast<T>(std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5);
    }
    check_finite("smooth_l1", out);
    Tensor<T> o(a.shape(), std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {a.tracked()})) {
        auto ai = a.impl(), oi = o.impl();
        tape->push([ai, oi, n]() {
            if (!detail::has_out_grad(oi)) return;
            auto* ga = detail::grad_of(ai, true);
            const T* x = ai->data.data();
            const T* g = oi->grad.data();
            for (int64_t i = 0; i < n; ++i) {
                double v = static_cast<double>(x[i]);
                double d = std::abs(v) < 1.0 ? v : (v > 0 ? 1.0 : -1.0);
                (*ga)[static_cast<size_t>(i)] += static_cast<T>(static_cast<double>(g[i]) * d);
            }
        });
    }
    return o;
}

// ---------------------------------------------------------------------------
// convolution (1x1 and 3x3 stride 1; 3x3 uses zero same-padding)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d: expects NCHW input and OIKK weights, got " +
                         shape_str(x.shape()) + " / " + shape_str(w.shape()));
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(0), KC = w.dim(1), K = w.dim(2);
    if (KC != C || w.dim(3) != K || (K != 1 && K != 3))
        throw ShapeError("conv2d: unsupported kernel " + shape_str(w.shape()) + " for input " +
                         shape_str(x.shape()));
    if (bias.ndim() != 1 || bias.dim(0) != O)
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
    const int64_t pad = K / 2;
    std::vector<T> out(static_cast<size_t>(N * O * H * W));
    const T* px = x.data().data();
    const T* pw = w.data().data();
    const T* pb = bias.data().data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    double acc = static_cast<double>(pb[o]);
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t ki = 0; ki < K; ++ki) {
                            int64_t ii = i + ki - pad;
                            if (ii < 0 || ii >= H) continue;
                            for (int64_t kj = 0; kj < K; ++kj) {
                                int64_t jj = j + kj - pad;
                                if (jj < 0 || jj >= W) continue;
                                acc += static_cast<double>(px[((n * C + c) * H + ii) * W + jj]) *
                                       static_cast<double>(pw[((o * C + c) * K + ki) * K + kj]);
                            }
                        }
                    out[static_cast<size_t>(((n * O + o) * H + i) * W + j)] = static_cast<T>(acc);
                }
    check_finite("conv2d", out);
    Tensor<T> oT(Shape{N, O, H, W}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, oT, {x.tracked(), w.tracked(), bias.tracked()})) {
        auto xi = x.impl(), wi = w.impl(), bi = bias.impl(), oi = oT.impl();
        bool tx = x.tracked(), tw = w.tracked(), tb = bias.tracked();
        tape->push([xi, wi, bi, oi, tx, tw, tb, N, C, H, W, O, K, pad]() {
            if (!detail::has_out_grad(oi)) return;
            const T* g = oi->grad.data();
            const T* px = xi->data.data();
            const T* pw = wi->data.data();
            auto* gx = detail::grad_of(xi, tx);
            auto* gw = detail::grad_of(wi, tw);
            auto* gb = detail::grad_of(bi, tb);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t i = 0; i < H; ++i)
                        for (int64_t j = 0; j < W; ++j) {
                            const T go = g[((n * O + o) * H + i) * W + j];
                            if (gb) (*gb)[static_cast<size_t>(o)] += go;
                            for (int64_t c = 0; c < C; ++c)
                                for (int64_t ki = 0; ki < K; ++ki) {
                                    int64_t ii = i + ki - pad;
                                    if (ii < 0 || ii >= H) continue;
                                    for (int64_t kj = 0; kj < K; ++kj) {
                                        int64_t jj = j + kj - pad;
                                        if (jj < 0 || jj >= W) continue;
                                        const int64_t xoff = ((n * C + c) * H + ii) * W + jj;
                                        const int64_t woff = ((o * C + c) * K + ki) * K + kj;
                                        if (gx) (*gx)[static_cast<size_t>(xoff)] += go * pw[woff];
                                        if (gw) (*gw)[static_cast<size_t>(woff)] += go * px[xoff];
                                    }
                                }
                        }
        });
    }
    return oT;
}

// ---------------------------------------------------------------------------
// bilinear sampling
// ---------------------------------------------------------------------------

// Samples a [H,W,C] feature map at continuous (x,y) points; integer coordinates
// address cell centers, out-of-range coordinates clamp to the border.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& fm, const std::vector<std::array<double, 2>>& points) {
    if (fm.ndim() != 3) throw ShapeError("bilinear_sample: expects [H,W,C], got " + shape_str(fm.shape()));
    const int64_t H = fm.dim(0), W = fm.dim(1), C = fm.dim(2);
    const int64_t P = static_cast<int64_t>(points.size());
    struct Corner {
        int64_t off;
        double w;
    };
    std::vector<std::array<Corner, 4>> corners(static_cast<size_t>(P));
    for (int64_t p = 0; p < P; ++p) {
        double x = std::clamp(points[static_cast<size_t>(p)][0], 0.0, static_cast<double>(W - 1));
        double y = std::clamp(points[static_cast<size_t>(p)][1], 0.0, static_cast<double>(H - 1));
        int64_t x0 = static_cast<int64_t>(std::floor(x));
        int64_t y0 = static_cast<int64_t>(std::floor(y));
        int64_t x1 = std::min(x0 + 1, W - 1);
        int64_t y1 = std::min(y0 + 1, H - 1);
        double fx = x - static_cast<double>(x0);
        double fy = y - static_cast<double>(y0);
        corners[static_cast<size_t>(p)] = {{{(y0 * W + x0) * C, (1 - fy) * (1 - fx)},
                                            {(y0 * W + x1) * C, (1 - fy) * fx},
                                            {(y1 * W + x0) * C, fy * (1 - fx)},
                                            {(y1 * W + x1) * C, fy * fx}}};
    }
    std::vector<T> out(static_cast<size_t>(P * C));
    const T* pf = fm.data().data();
    for (int64_t p = 0; p < P; ++p)
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0;
            for (const auto& cr : corners[static_cast<size_t>(p)])
                acc += cr.w * static_cast<double>(pf[cr.off + c]);
            out[static_cast<size_t>(p * C + c)] = static_cast<T>(acc);
        }
    check_finite("bilinear_sample", out);
    Tensor<T> o(Shape{P, C}, std::move(out));
    auto* tape = Tape<T>::active();
    if (detail::record(tape, o, {fm.tracked()})) {
        auto fi = fm.impl(), oi = o.impl();
        auto cs = std::make_shared<std::vector<std::array<Corner, 4>>>(std::move(corners));
        tape->push([fi, oi, cs, P, C]() {
            if (!detail::has_out_grad(oi)) return;
            auto* gf = detail::grad_of(fi, true);
            const T* g = oi->grad.data();
            for (int64_t p = 0; p < P; ++p)
                for (int64_t c = 0; c < C; ++c)
                    for (const auto& cr : (*cs)[static_cast<size_t>(p)])
                        (*gf)[static_cast<size_t>(cr.off + c)] +=
                            static_cast<T>(cr.w * static_cast<double>(g[p * C + c]));
        });
    }
    return o;
}

} // namespace umg
