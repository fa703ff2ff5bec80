#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cswin/tensor.hpp"

namespace cswin {

template <class T>
using EigenMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<EigenMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const EigenMatrix<T>>;

namespace detail {

// ---- broadcasting ---------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw shape_error(std::string(op) + ": shapes " + shape_str(a) + " and " +
                              shape_str(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `s` aligned to a broadcast result of rank r; 0 on expanded dims.
inline std::vector<int64_t> broadcast_strides(const Shape& s, size_t r) {
    std::vector<int64_t> st(r, 0);
    auto own = strides_of(s);
    size_t off = r - s.size();
    for (size_t i = 0; i < s.size(); ++i) st[off + i] = (s[i] == 1) ? 0 : own[i];
    return st;
}

// Calls f(i_out, i_a, i_b) for every element of the broadcast result.
template <class F>
void broadcast_foreach(const Shape& out, const Shape& as, const Shape& bs, F&& f) {
    size_t r = out.size();
    int64_t n = numel_of(out);
    if (as == bs) {  // fast path, no index arithmetic
        for (int64_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    auto sa = broadcast_strides(as, r);
    auto sb = broadcast_strides(bs, r);
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
        }
    }
}

// Sums grad over the axes that were broadcast to reach `out`, producing a
// buffer matching `target`.
template <class T>
std::vector<T> reduce_to_shape(const std::vector<T>& grad, const Shape& out, const Shape& target) {
    std::vector<T> res(static_cast<size_t>(numel_of(target)), T(0));
    auto st = broadcast_strides(target, out.size());
    size_t r = out.size();
    std::vector<int64_t> idx(r, 0);
    int64_t it = 0;
    int64_t n = numel_of(out);
    for (int64_t i = 0; i < n; ++i) {
        res[it] += grad[i];
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            it += st[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            it -= st[d] * out[d];
        }
    }
    return res;
}

// Decomposes a shape around one axis: index = (o * n + i) * inner + j.
struct AxisView {
    int64_t outer = 1, n = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, size_t axis) {
    if (axis >= s.size())
        throw value_error("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    AxisView v;
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace detail

// ---- binary elementwise (broadcasting) -------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    const auto &da = a.data(), &db = b.data();
    detail::broadcast_foreach(os, a.shape(), b.shape(),
                              [&](int64_t i, int64_t ia, int64_t ib) { out[i] = da[ia] + db[ib]; });
    return Tensor<T>::make(os, std::move(out), {a, b}, [os](detail::Node<T>& n) {
        auto& g = n.grad;
        for (int p = 0; p < 2; ++p) {
            auto& par = n.parents[p];
            if (!par.requires_grad()) continue;
            auto red = detail::reduce_to_shape(g, os, par.shape());
            auto& pg = par.grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    const auto &da = a.data(), &db = b.data();
    detail::broadcast_foreach(os, a.shape(), b.shape(),
                              [&](int64_t i, int64_t ia, int64_t ib) { out[i] = da[ia] - db[ib]; });
    return Tensor<T>::make(os, std::move(out), {a, b}, [os](detail::Node<T>& n) {
        auto& g = n.grad;
        if (n.parents[0].requires_grad()) {
            auto red = detail::reduce_to_shape(g, os, n.parents[0].shape());
            auto& pg = n.parents[0].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
        if (n.parents[1].requires_grad()) {
            auto red = detail::reduce_to_shape(g, os, n.parents[1].shape());
            auto& pg = n.parents[1].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] -= red[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    const auto &da = a.data(), &db = b.data();
    detail::broadcast_foreach(os, a.shape(), b.shape(),
                              [&](int64_t i, int64_t ia, int64_t ib) { out[i] = da[ia] * db[ib]; });
    return Tensor<T>::make(os, std::move(out), {a, b}, [os](detail::Node<T>& n) {
        auto& g = n.grad;
        const auto& xa = n.parents[0].data();
        const auto& xb = n.parents[1].data();
        bool na = n.parents[0].requires_grad(), nb = n.parents[1].requires_grad();
        std::vector<T> ga, gb;
        if (na) ga.assign(g.size(), T(0));
        if (nb) gb.assign(g.size(), T(0));
        detail::broadcast_foreach(os, n.parents[0].shape(), n.parents[1].shape(),
                                  [&](int64_t i, int64_t ia, int64_t ib) {
                                      if (na) ga[i] = g[i] * xb[ib];
                                      if (nb) gb[i] = g[i] * xa[ia];
                                  });
        if (na) {
            auto red = detail::reduce_to_shape(ga, os, n.parents[0].shape());
            auto& pg = n.parents[0].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
        if (nb) {
            auto red = detail::reduce_to_shape(gb, os, n.parents[1].shape());
            auto& pg = n.parents[1].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
    });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape(), "div");
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    const auto &da = a.data(), &db = b.data();
    detail::broadcast_foreach(os, a.shape(), b.shape(),
                              [&](int64_t i, int64_t ia, int64_t ib) { out[i] = da[ia] / db[ib]; });
    check_finite(out, "div");
    return Tensor<T>::make(os, std::move(out), {a, b}, [os](detail::Node<T>& n) {
        auto& g = n.grad;
        const auto& xa = n.parents[0].data();
        const auto& xb = n.parents[1].data();
        bool na = n.parents[0].requires_grad(), nb = n.parents[1].requires_grad();
        std::vector<T> ga, gb;
        if (na) ga.assign(g.size(), T(0));
        if (nb) gb.assign(g.size(), T(0));
        detail::broadcast_foreach(os, n.parents[0].shape(), n.parents[1].shape(),
                                  [&](int64_t i, int64_t ia, int64_t ib) {
                                      T inv = T(1) / xb[ib];
                                      if (na) ga[i] = g[i] * inv;
                                      if (nb) gb[i] = -g[i] * xa[ia] * inv * inv;
                                  });
        if (na) {
            auto red = detail::reduce_to_shape(ga, os, n.parents[0].shape());
            auto& pg = n.parents[0].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
        if (nb) {
            auto red = detail::reduce_to_shape(gb, os, n.parents[1].shape());
            auto& pg = n.parents[1].grad();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += red[i];
        }
    });
}

// ---- unary elementwise ------------------------------------------------------

namespace detail {

// dfdx receives (x, y) so ops whose derivative is cheaper in terms of the
// output (exp, sigmoid) can use it.
template <class T, class Fwd, class Dfdx>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, bool guard, Fwd f, Dfdx dfdx) {
    std::vector<T> out(x.data().size());
    const auto& dx = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(dx[i]);
    if (guard) check_finite(out, name);
    return Tensor<T>::make(x.shape(), std::move(out), {x}, [dfdx](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        const auto& px = n.parents[0].data();
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i] * dfdx(px[i], n.data[i]);
    });
}

}  // namespace detail

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return detail::unary_op(
        x, "neg", false, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(
        x, "exp", true, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary_op(
        x, "log", true, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary_op(
        x, "sqrt", true, [](T v) { return std::sqrt(v); },
        [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op(
        x, "abs", false, [](T v) { return std::fabs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, "relu", false, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    // exact erf form
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        x, "gelu", false,
        [](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * inv_sqrt2))); },
        [](T v, T) {
            double cdf = 0.5 * (1.0 + std::erf(double(v) * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * double(v) * double(v));
            return T(cdf + double(v) * pdf);
        });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x, "sigmoid", false,
        [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op(
        x, "softplus", true,
        [](T v) {
            if (v > T(20)) return v;
            if (v < T(-20)) return std::exp(v);
            return std::log1p(std::exp(v));
        },
        [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
    return detail::unary_op(
        x, "pow", true, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return p == T(0) ? T(0) : p * std::pow(v, p - T(1)); });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
    return detail::unary_op(
        x, "clamp_min", false, [lo](T v) { return v < lo ? lo : v; },
        [lo](T v, T) { return v < lo ? T(0) : T(1); });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, "add_scalar", false, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, "mul_scalar", false, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// ---- shape ops --------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    std::vector<T> out = x.data();
    return Tensor<T>::make(std::move(shape), std::move(out), {x}, [](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::vector<size_t> axes) {
    const Shape& s = x.shape();
    if (axes.size() != s.size())
        throw value_error("permute: got " + std::to_string(axes.size()) + " axes for shape " +
                          shape_str(s));
    Shape os(s.size());
    for (size_t i = 0; i < axes.size(); ++i) os[i] = s.at(axes[i]);
    auto in_strides = strides_of(s);
    std::vector<int64_t> step(axes.size());  // stride in input per output axis
    for (size_t i = 0; i < axes.size(); ++i) step[i] = in_strides[axes[i]];

    int64_t n = x.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const auto& dx = x.data();
    size_t r = os.size();
    std::vector<int64_t> idx(r, 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = dx[src];
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            src += step[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            src -= step[d] * os[d];
        }
    }
    return Tensor<T>::make(os, std::move(out), {x}, [os, step](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        size_t r = os.size();
        std::vector<int64_t> idx(r, 0);
        int64_t src = 0;
        int64_t cnt = n.numel();
        for (int64_t i = 0; i < cnt; ++i) {
            pg[src] += n.grad[i];
            for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
                ++idx[d];
                src += step[d];
                if (idx[d] < os[d]) break;
                idx[d] = 0;
                src -= step[d] * os[d];
            }
        }
    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, size_t axis) {
    if (xs.empty()) throw value_error("concat: empty input list");
    const Shape& s0 = xs[0].shape();
    Shape os = s0;
    for (size_t k = 1; k < xs.size(); ++k) {
        const Shape& sk = xs[k].shape();
        if (sk.size() != s0.size())
            throw shape_error("concat: rank mismatch between " + shape_str(s0) + " and " +
                              shape_str(sk));
        for (size_t d = 0; d < s0.size(); ++d)
            if (d != axis && sk[d] != s0[d])
                throw shape_error("concat: shapes " + shape_str(s0) + " and " + shape_str(sk) +
                                  " differ off the concat axis");
        os[axis] += sk[axis];
    }
    auto v = detail::axis_view(os, axis);
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    std::vector<int64_t> lens;
    int64_t pos = 0;
    for (const auto& x : xs) {
        int64_t len = x.shape()[axis];
        lens.push_back(len);
        const auto& dx = x.data();
        for (int64_t o = 0; o < v.outer; ++o)
            std::copy(dx.begin() + o * len * v.inner, dx.begin() + (o + 1) * len * v.inner,
                      out.begin() + (o * v.n + pos) * v.inner);
        pos += len;
    }
    return Tensor<T>::make(os, std::move(out), xs, [v, lens](detail::Node<T>& n) {
        int64_t pos = 0;
        for (size_t k = 0; k < n.parents.size(); ++k) {
            int64_t len = lens[k];
            if (n.parents[k].requires_grad()) {
                auto& pg = n.parents[k].grad();
                for (int64_t o = 0; o < v.outer; ++o) {
                    const T* src = n.grad.data() + (o * v.n + pos) * v.inner;
                    T* dst = pg.data() + o * len * v.inner;
                    for (int64_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
                }
            }
            pos += len;
        }
    });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, size_t axis, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    auto v = detail::axis_view(s, axis);
    if (start < 0 || len <= 0 || start + len > v.n)
        throw value_error("slice: range [" + std::to_string(start) + "," +
                          std::to_string(start + len) + ") invalid for shape " + shape_str(s));
    Shape os = s;
    os[axis] = len;
    std::vector<T> out(static_cast<size_t>(numel_of(os)));
    const auto& dx = x.data();
    for (int64_t o = 0; o < v.outer; ++o)
        std::copy(dx.begin() + (o * v.n + start) * v.inner,
                  dx.begin() + (o * v.n + start + len) * v.inner, out.begin() + o * len * v.inner);
    return Tensor<T>::make(os, std::move(out), {x}, [v, start, len](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        for (int64_t o = 0; o < v.outer; ++o) {
            const T* src = n.grad.data() + o * len * v.inner;
            T* dst = pg.data() + (o * v.n + start) * v.inner;
            for (int64_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
        }
    });
}

// Zero padding; pads[d] = {before, after} per axis.
template <class T>
Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& pads) {
    const Shape& s = x.shape();
    if (pads.size() != s.size())
        throw value_error("pad: " + std::to_string(pads.size()) + " pad pairs for shape " +
                          shape_str(s));
    Shape os = s;
    for (size_t d = 0; d < s.size(); ++d) {
        if (pads[d].first < 0 || pads[d].second < 0) throw value_error("pad: negative padding");
        os[d] += pads[d].first + pads[d].second;
    }
    auto ostr = strides_of(os);
    int64_t base = 0;
    for (size_t d = 0; d < s.size(); ++d) base += pads[d].first * ostr[d];

    std::vector<T> out(static_cast<size_t>(numel_of(os)), T(0));
    const auto& dx = x.data();
    size_t r = s.size();
    std::vector<int64_t> idx(r, 0);
    int64_t dst = base;
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        out[dst] = dx[i];
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            dst += ostr[d];
            if (idx[d] < s[d]) break;
            idx[d] = 0;
            dst -= ostr[d] * s[d];
        }
    }
    return Tensor<T>::make(os, std::move(out), {x}, [s, ostr, base](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        size_t r = s.size();
        std::vector<int64_t> idx(r, 0);
        int64_t src = base;
        for (size_t i = 0; i < pg.size(); ++i) {
            pg[i] += n.grad[src];
            for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
                ++idx[d];
                src += ostr[d];
                if (idx[d] < s[d]) break;
                idx[d] = 0;
                src -= ostr[d] * s[d];
            }
        }
    });
}

// Inverse of pad: keeps the box starting at `offsets` with `extents`.
template <class T>
Tensor<T> crop(const Tensor<T>& x, const std::vector<int64_t>& offsets, const Shape& extents) {
    const Shape& s = x.shape();
    if (offsets.size() != s.size() || extents.size() != s.size())
        throw value_error("crop: rank mismatch with shape " + shape_str(s));
    Tensor<T> cur = x;
    for (size_t d = 0; d < s.size(); ++d)
        if (offsets[d] != 0 || extents[d] != cur.shape()[d])
            cur = slice(cur, d, offsets[d], extents[d]);
    return cur;
}

// ---- reductions --------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return Tensor<T>::make({}, {acc}, {x}, [](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        T g = n.grad[0];
        for (auto& v : pg) v += g;
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / T(x.numel()));
}

// Sum over `axes`, keeping them as extent-1 dims.
template <class T>
Tensor<T> sum_axes(const Tensor<T>& x, std::vector<size_t> axes) {
    const Shape& s = x.shape();
    std::vector<bool> reduce(s.size(), false);
    for (size_t a : axes) {
        if (a >= s.size())
            throw value_error("sum_axes: axis " + std::to_string(a) + " out of range for " +
                              shape_str(s));
        reduce[a] = true;
    }
    Shape os = s;
    for (size_t d = 0; d < s.size(); ++d)
        if (reduce[d]) os[d] = 1;
    auto ostr = strides_of(os);
    std::vector<int64_t> map_str(s.size());
    for (size_t d = 0; d < s.size(); ++d) map_str[d] = reduce[d] ? 0 : ostr[d];

    std::vector<T> out(static_cast<size_t>(numel_of(os)), T(0));
    const auto& dx = x.data();
    size_t r = s.size();
    std::vector<int64_t> idx(r, 0);
    int64_t dst = 0;
    int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        out[dst] += dx[i];
        for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
            ++idx[d];
            dst += map_str[d];
            if (idx[d] < s[d]) break;
            idx[d] = 0;
            dst -= map_str[d] * s[d];
        }
    }
    return Tensor<T>::make(os, std::move(out), {x}, [s, map_str](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        size_t r = s.size();
        std::vector<int64_t> idx(r, 0);
        int64_t src = 0;
        for (size_t i = 0; i < pg.size(); ++i) {
            pg[i] += n.grad[src];
            for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
                ++idx[d];
                src += map_str[d];
                if (idx[d] < s[d]) break;
                idx[d] = 0;
                src -= map_str[d] * s[d];
            }
        }
    });
}

template <class T>
Tensor<T> mean_axes(const Tensor<T>& x, std::vector<size_t> axes) {
    int64_t cnt = 1;
    for (size_t a : axes) cnt *= x.shape().at(a);
    return mul_scalar(sum_axes(x, std::move(axes)), T(1) / T(cnt));
}

// ---- matrix products -----------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    if (a.rank() != 2 || b.rank() != 2)
        throw shape_error("matmul: expected rank-2 operands, got " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
    int64_t m = ta ? a.dim(1) : a.dim(0);
    int64_t k = ta ? a.dim(0) : a.dim(1);
    int64_t kb = tb ? b.dim(1) : b.dim(0);
    int64_t n = tb ? b.dim(0) : b.dim(1);
    if (k != kb)
        throw shape_error("matmul: inner extents disagree for " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(m * n));
    {
        ConstMatMap<T> A(a.data().data(), a.dim(0), a.dim(1));
        ConstMatMap<T> B(b.data().data(), b.dim(0), b.dim(1));
        MatMap<T> C(out.data(), m, n);
        if (!ta && !tb)
            C.noalias() = A * B;
        else if (ta && !tb)
            C.noalias() = A.transpose() * B;
        else if (!ta && tb)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
    }
    return Tensor<T>::make({m, n}, std::move(out), {a, b}, [m, n, ta, tb](detail::Node<T>& n_) {
        ConstMatMap<T> G(n_.grad.data(), m, n);
        auto& pa = n_.parents[0];
        auto& pb = n_.parents[1];
        ConstMatMap<T> A(pa.data().data(), pa.shape()[0], pa.shape()[1]);
        ConstMatMap<T> B(pb.data().data(), pb.shape()[0], pb.shape()[1]);
        if (pa.requires_grad()) {
            MatMap<T> GA(pa.grad().data(), pa.shape()[0], pa.shape()[1]);
            if (!ta)
                GA.noalias() += tb ? (G * B).eval() : (G * B.transpose()).eval();
            else
                GA.noalias() += tb ? (B.transpose() * G.transpose()).eval() : (B * G.transpose()).eval();
        }
        if (pb.requires_grad()) {
            MatMap<T> GB(pb.grad().data(), pb.shape()[0], pb.shape()[1]);
            if (!tb)
                GB.noalias() += ta ? (A * G).eval() : (A.transpose() * G).eval();
            else
                GB.noalias() += ta ? (G.transpose() * A.transpose()).eval() : (G.transpose() * A).eval();
        }
    });
}

// Batched matmul over a leading batch axis: (B,M,K) x (B,K,N) -> (B,M,N).
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw shape_error("bmm: expected matching rank-3 operands, got " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()));
    int64_t bs = a.dim(0);
    int64_t m = ta ? a.dim(2) : a.dim(1);
    int64_t k = ta ? a.dim(1) : a.dim(2);
    int64_t kb = tb ? b.dim(2) : b.dim(1);
    int64_t n = tb ? b.dim(1) : b.dim(2);
    if (k != kb)
        throw shape_error("bmm: inner extents disagree for " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    std::vector<T> out(static_cast<size_t>(bs * m * n));
    int64_t sa = a.dim(1) * a.dim(2), sb = b.dim(1) * b.dim(2), sc = m * n;
    for (int64_t i = 0; i < bs; ++i) {
        ConstMatMap<T> A(a.data().data() + i * sa, a.dim(1), a.dim(2));
        ConstMatMap<T> B(b.data().data() + i * sb, b.dim(1), b.dim(2));
        MatMap<T> C(out.data() + i * sc, m, n);
        if (!ta && !tb)
            C.noalias() = A * B;
        else if (ta && !tb)
            C.noalias() = A.transpose() * B;
        else if (!ta && tb)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A.transpose() * B.transpose();
    }
    return Tensor<T>::make({bs, m, n}, std::move(out), {a, b},
                           [bs, m, n, sa, sb, sc, ta, tb](detail::Node<T>& n_) {
        auto& pa = n_.parents[0];
        auto& pb = n_.parents[1];
        bool na = pa.requires_grad(), nb = pb.requires_grad();
        if (na) pa.grad();
        if (nb) pb.grad();
        for (int64_t i = 0; i < bs; ++i) {
            ConstMatMap<T> G(n_.grad.data() + i * sc, m, n);
            ConstMatMap<T> A(pa.data().data() + i * sa, pa.shape()[1], pa.shape()[2]);
            ConstMatMap<T> B(pb.data().data() + i * sb, pb.shape()[1], pb.shape()[2]);
            if (na) {
                MatMap<T> GA(pa.grad().data() + i * sa, pa.shape()[1], pa.shape()[2]);
                if (!ta)
                    GA.noalias() += tb ? (G * B).eval() : (G * B.transpose()).eval();
                else
                    GA.noalias() += tb ? (B.transpose() * G.transpose()).eval()
                                       : (B * G.transpose()).eval();
            }
            if (nb) {
                MatMap<T> GB(pb.grad().data() + i * sb, pb.shape()[1], pb.shape()[2]);
                if (!tb)
                    GB.noalias() += ta ? (A * G).eval() : (A.transpose() * G).eval();
                else
                    GB.noalias() += ta ? (G.transpose() * A.transpose()).eval()
                                       : (G.transpose() * A).eval();
            }
        }
    });
}

// ---- softmax / cross-entropy ----------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, size_t axis) {
    auto v = detail::axis_view(x.shape(), axis);
    std::vector<T> out(x.data().size());
    const auto& dx = x.data();
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
            int64_t base = o * v.n * v.inner + in;
            T mx = dx[base];
            for (int64_t i = 1; i < v.n; ++i) mx = std::max(mx, dx[base + i * v.inner]);
            T z = T(0);
            for (int64_t i = 0; i < v.n; ++i) {
                T e = std::exp(dx[base + i * v.inner] - mx);
                out[base + i * v.inner] = e;
                z += e;
            }
            T inv = T(1) / z;
            for (int64_t i = 0; i < v.n; ++i) out[base + i * v.inner] *= inv;
        }
    }
    check_finite(out, "softmax");
    return Tensor<T>::make(x.shape(), std::move(out), {x}, [v](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        const auto& y = n.data;
        const auto& g = n.grad;
        for (int64_t o = 0; o < v.outer; ++o) {
            for (int64_t in = 0; in < v.inner; ++in) {
                int64_t base = o * v.n * v.inner + in;
                T dot = T(0);
                for (int64_t i = 0; i < v.n; ++i)
                    dot += g[base + i * v.inner] * y[base + i * v.inner];
                for (int64_t i = 0; i < v.n; ++i) {
                    int64_t p = base + i * v.inner;
                    pg[p] += y[p] * (g[p] - dot);
                }
            }
        }
    });
}

// Mean cross-entropy of row logits against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2)
        throw shape_error("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape()));
    int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw shape_error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                          shape_str(logits.shape()));
    for (int64_t lbl : labels)
        if (lbl < 0 || lbl >= k)
            throw value_error("cross_entropy: label " + std::to_string(lbl) + " out of range [0," +
                              std::to_string(k) + ")");
    const auto& d = logits.data();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        const T* row = d.data() + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        acc += std::log(z) + mx - row[labels[i]];
    }
    acc /= T(n);
    if (!std::isfinite(acc)) throw numeric_error("cross_entropy produced a non-finite value");
    return Tensor<T>::make({}, {acc}, {logits}, [labels, n, k](detail::Node<T>& nd) {
        if (!nd.parents[0].requires_grad()) return;
        auto& pg = nd.parents[0].grad();
        const auto& d = nd.parents[0].data();
        T g = nd.grad[0] / T(n);
        for (int64_t i = 0; i < n; ++i) {
            const T* row = d.data() + i * k;
            T mx = row[0];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            T z = T(0);
            for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
            for (int64_t j = 0; j < k; ++j) {
                T p = std::exp(row[j] - mx) / z;
                pg[i * k + j] += g * (p - (labels[i] == j ? T(1) : T(0)));
            }
        }
    });
}

// table (H,S) gathered through idx (len T*T) -> (H,T,T); used for relative
// position bias. idx entries index the S axis.
template <class T>
Tensor<T> bias_lookup(const Tensor<T>& table, const std::vector<int64_t>& idx, int64_t tokens) {
    if (table.rank() != 2)
        throw shape_error("bias_lookup: table must be rank-2, got " + shape_str(table.shape()));
    int64_t heads = table.dim(0), s = table.dim(1);
    if (static_cast<int64_t>(idx.size()) != tokens * tokens)
        throw shape_error("bias_lookup: index length " + std::to_string(idx.size()) +
                          " != tokens^2 for tokens=" + std::to_string(tokens));
    for (int64_t v : idx)
        if (v < 0 || v >= s) throw value_error("bias_lookup: index out of table range");
    std::vector<T> out(static_cast<size_t>(heads * tokens * tokens));
    const auto& d = table.data();
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t ij = 0; ij < tokens * tokens; ++ij) out[h * tokens * tokens + ij] = d[h * s + idx[ij]];
    return Tensor<T>::make({heads, tokens, tokens}, std::move(out), {table},
                           [idx, heads, s, tokens](detail::Node<T>& n) {
        if (!n.parents[0].requires_grad()) return;
        auto& pg = n.parents[0].grad();
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t ij = 0; ij < tokens * tokens; ++ij)
                pg[h * s + idx[ij]] += n.grad[h * tokens * tokens + ij];
    });
}

// ---- composites -------------------------------------------------------------------

// Divides by sqrt(|x|^2 + eps^2): exact zero vectors stay exactly zero
// (cosine against them is defined as 0) and the gradient stays finite there;
// the smoothing term is far below floating-point resolution for any vector
// of practical magnitude.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, size_t axis, T eps = T(1e-12)) {
    auto n2 = sum_axes(mul(x, x), {axis});
    auto n = sqrt(add_scalar(n2, eps * eps));
    return div(x, n);
}

// Cosine similarity of matched vectors along `axis`; result keeps the axis
// as extent 1.
template <class T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b, size_t axis, T eps = T(1e-12)) {
    return sum_axes(mul(l2_normalize(a, axis, eps), l2_normalize(b, axis, eps)), {axis});
}

// ---- operators --------------------------------------------------------------------

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

}  // namespace cswin
