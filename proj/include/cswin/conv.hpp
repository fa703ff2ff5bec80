#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cswin/ops.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

namespace detail {

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

inline int64_t convt_out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
    return (in - 1) * s - 2 * p + k;
}

// col is (Ci*kh*kw*kd) x (OH*OW*OD), row-major. Voxels outside the padded
// image contribute zeros.
template <class T>
void im2col_3d(const T* img, int64_t ci, Dims3 in, Dims3 k, Dims3 s, Dims3 p, Dims3 out, T* col) {
    const int64_t ovox = out[0] * out[1] * out[2];
    const int64_t in12 = in[1] * in[2];
    int64_t row = 0;
    for (int64_t c = 0; c < ci; ++c) {
        const T* ch = img + c * in[0] * in12;
        for (int64_t kh = 0; kh < k[0]; ++kh)
            for (int64_t kw = 0; kw < k[1]; ++kw)
                for (int64_t kd = 0; kd < k[2]; ++kd, ++row) {
                    T* dst = col + row * ovox;
                    for (int64_t oh = 0; oh < out[0]; ++oh) {
                        int64_t ih = oh * s[0] - p[0] + kh;
                        if (ih < 0 || ih >= in[0]) {
                            std::fill(dst, dst + out[1] * out[2], T(0));
                            dst += out[1] * out[2];
                            continue;
                        }
                        for (int64_t ow = 0; ow < out[1]; ++ow) {
                            int64_t iw = ow * s[1] - p[1] + kw;
                            if (iw < 0 || iw >= in[1]) {
                                std::fill(dst, dst + out[2], T(0));
                                dst += out[2];
                                continue;
                            }
                            const T* src = ch + ih * in12 + iw * in[2];
                            for (int64_t od = 0; od < out[2]; ++od, ++dst) {
                                int64_t id = od * s[2] - p[2] + kd;
                                *dst = (id >= 0 && id < in[2]) ? src[id] : T(0);
                            }
                        }
                    }
                }
    }
}

// Scatter-add inverse of im2col_3d.
template <class T>
void col2im_add_3d(const T* col, int64_t ci, Dims3 in, Dims3 k, Dims3 s, Dims3 p, Dims3 out,
                   T* img) {
    const int64_t ovox = out[0] * out[1] * out[2];
    const int64_t in12 = in[1] * in[2];
    int64_t row = 0;
    for (int64_t c = 0; c < ci; ++c) {
        T* ch = img + c * in[0] * in12;
        for (int64_t kh = 0; kh < k[0]; ++kh)
            for (int64_t kw = 0; kw < k[1]; ++kw)
                for (int64_t kd = 0; kd < k[2]; ++kd, ++row) {
                    const T* src = col + row * ovox;
                    for (int64_t oh = 0; oh < out[0]; ++oh) {
                        int64_t ih = oh * s[0] - p[0] + kh;
                        if (ih < 0 || ih >= in[0]) {
                            src += out[1] * out[2];
                            continue;
                        }
                        for (int64_t ow = 0; ow < out[1]; ++ow) {
                            int64_t iw = ow * s[1] - p[1] + kw;
                            if (iw < 0 || iw >= in[1]) {
                                src += out[2];
                                continue;
                            }
                            T* dst = ch + ih * in12 + iw * in[2];
                            for (int64_t od = 0; od < out[2]; ++od, ++src) {
                                int64_t id = od * s[2] - p[2] + kd;
                                if (id >= 0 && id < in[2]) dst[id] += *src;
                            }
                        }
                    }
                }
    }
}

}  // namespace detail

// 3D convolution. x (N,Ci,H,W,D), w (Co,Ci,kh,kw,kd), optional bias (Co).
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Dims3 stride,
                 Dims3 padding) {
    if (x.rank() != 5 || w.rank() != 5)
        throw shape_error("conv3d: expected (N,Ci,H,W,D) and (Co,Ci,kh,kw,kd), got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw shape_error("conv3d: channel mismatch between " + shape_str(x.shape()) + " and " +
                          shape_str(w.shape()));
    const int64_t n = x.dim(0), ci = x.dim(1), co = w.dim(0);
    const Dims3 in{x.dim(2), x.dim(3), x.dim(4)};
    const Dims3 k{w.dim(2), w.dim(3), w.dim(4)};
    Dims3 out;
    for (int d = 0; d < 3; ++d) {
        out[d] = detail::conv_out_extent(in[d], k[d], stride[d], padding[d]);
        if (out[d] < 1)
            throw shape_error("conv3d: kernel " + shape_str(w.shape()) + " does not fit input " +
                              shape_str(x.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw shape_error("conv3d: bias shape " + shape_str(bias.shape()) + " != (" +
                          std::to_string(co) + ")");

    const int64_t ivox = in[0] * in[1] * in[2];
    const int64_t ovox = out[0] * out[1] * out[2];
    const int64_t krows = ci * k[0] * k[1] * k[2];
    std::vector<T> res(static_cast<size_t>(n * co * ovox));
    std::vector<T> col(static_cast<size_t>(krows * ovox));
    ConstMatMap<T> W(w.data().data(), co, krows);
    for (int64_t i = 0; i < n; ++i) {
        detail::im2col_3d(x.data().data() + i * ci * ivox, ci, in, k, stride, padding, out,
                          col.data());
        ConstMatMap<T> C(col.data(), krows, ovox);
        MatMap<T> O(res.data() + i * co * ovox, co, ovox);
        O.noalias() = W * C;
        if (bias.defined()) {
            const auto& bv = bias.data();
            for (int64_t c = 0; c < co; ++c)
                for (int64_t o = 0; o < ovox; ++o) res[i * co * ovox + c * ovox + o] += bv[c];
        }
    }
    std::vector<Tensor<T>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return Tensor<T>::make(
        {n, co, out[0], out[1], out[2]}, std::move(res), std::move(parents),
        [n, ci, co, in, k, stride, padding, out, ivox, ovox, krows](detail::Node<T>& nd) {
            auto& px = nd.parents[0];
            auto& pw = nd.parents[1];
            bool nx = px.requires_grad(), nw = pw.requires_grad();
            bool nb = nd.parents.size() > 2 && nd.parents[2].requires_grad();
            if (nx) px.grad();
            if (nw) pw.grad();
            std::vector<T> col(static_cast<size_t>(krows * ovox));
            ConstMatMap<T> W(pw.data().data(), co, krows);
            for (int64_t i = 0; i < n; ++i) {
                ConstMatMap<T> G(nd.grad.data() + i * co * ovox, co, ovox);
                if (nw) {
                    detail::im2col_3d(px.data().data() + i * ci * ivox, ci, in, k, stride, padding,
                                      out, col.data());
                    ConstMatMap<T> C(col.data(), krows, ovox);
                    MatMap<T> GW(pw.grad().data(), co, krows);
                    GW.noalias() += G * C.transpose();
                }
                if (nx) {
                    MatMap<T> CG(col.data(), krows, ovox);
                    CG.noalias() = W.transpose() * G;
                    detail::col2im_add_3d(col.data(), ci, in, k, stride, padding, out,
                                          px.grad().data() + i * ci * ivox);
                }
                if (nb) {
                    auto& bg = nd.parents[2].grad();
                    for (int64_t c = 0; c < co; ++c) {
                        T acc = T(0);
                        const T* row = nd.grad.data() + i * co * ovox + c * ovox;
                        for (int64_t o = 0; o < ovox; ++o) acc += row[o];
                        bg[c] += acc;
                    }
                }
            }
        });
}

// Transposed 3D convolution. x (N,Ci,H,W,D), w (Ci,Co,kh,kw,kd), optional
// bias (Co). Output extent per axis: (in-1)*stride - 2*pad + kernel.
template <class T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           Dims3 stride, Dims3 padding) {
    if (x.rank() != 5 || w.rank() != 5)
        throw shape_error("conv_transpose3d: expected (N,Ci,H,W,D) and (Ci,Co,kh,kw,kd), got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(0))
        throw shape_error("conv_transpose3d: channel mismatch between " + shape_str(x.shape()) +
                          " and " + shape_str(w.shape()));
    const int64_t n = x.dim(0), ci = x.dim(1), co = w.dim(1);
    const Dims3 in{x.dim(2), x.dim(3), x.dim(4)};
    const Dims3 k{w.dim(2), w.dim(3), w.dim(4)};
    Dims3 out;
    for (int d = 0; d < 3; ++d) {
        out[d] = detail::convt_out_extent(in[d], k[d], stride[d], padding[d]);
        if (out[d] < 1)
            throw shape_error("conv_transpose3d: degenerate output extent for input " +
                              shape_str(x.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw shape_error("conv_transpose3d: bias shape " + shape_str(bias.shape()) + " != (" +
                          std::to_string(co) + ")");

    const int64_t ivox = in[0] * in[1] * in[2];
    const int64_t ovox = out[0] * out[1] * out[2];
    const int64_t krows = co * k[0] * k[1] * k[2];
    std::vector<T> res(static_cast<size_t>(n * co * ovox), T(0));
    std::vector<T> col(static_cast<size_t>(krows * ivox));
    // weight viewed as (Ci, Co*k^3)
    ConstMatMap<T> W(w.data().data(), ci, krows);
    for (int64_t i = 0; i < n; ++i) {
        ConstMatMap<T> X(x.data().data() + i * ci * ivox, ci, ivox);
        MatMap<T> C(col.data(), krows, ivox);
        C.noalias() = W.transpose() * X;
        // roles of "image" and "output" swap relative to conv3d
        detail::col2im_add_3d(col.data(), co, out, k, stride, padding, in,
                              res.data() + i * co * ovox);
        if (bias.defined()) {
            const auto& bv = bias.data();
            for (int64_t c = 0; c < co; ++c)
                for (int64_t o = 0; o < ovox; ++o) res[i * co * ovox + c * ovox + o] += bv[c];
        }
    }
    std::vector<Tensor<T>> parents{x, w};
    if (bias.defined()) parents.push_back(bias);
    return Tensor<T>::make(
        {n, co, out[0], out[1], out[2]}, std::move(res), std::move(parents),
        [n, ci, co, in, k, stride, padding, out, ivox, ovox, krows](detail::Node<T>& nd) {
            auto& px = nd.parents[0];
            auto& pw = nd.parents[1];
            bool nx = px.requires_grad(), nw = pw.requires_grad();
            bool nb = nd.parents.size() > 2 && nd.parents[2].requires_grad();
            if (nx) px.grad();
            if (nw) pw.grad();
            std::vector<T> col(static_cast<size_t>(krows * ivox));
            ConstMatMap<T> W(pw.data().data(), ci, krows);
            for (int64_t i = 0; i < n; ++i) {
                // im2col over the output gradient has exactly ivox columns
                detail::im2col_3d(nd.grad.data() + i * co * ovox, co, out, k, stride, padding, in,
                                  col.data());
                ConstMatMap<T> C(col.data(), krows, ivox);
                if (nx) {
                    MatMap<T> GX(px.grad().data() + i * ci * ivox, ci, ivox);
                    GX.noalias() += W * C;
                }
                if (nw) {
                    ConstMatMap<T> X(px.data().data() + i * ci * ivox, ci, ivox);
                    MatMap<T> GW(pw.grad().data(), ci, krows);
                    GW.noalias() += X * C.transpose();
                }
                if (nb) {
                    auto& bg = nd.parents[2].grad();
                    for (int64_t c = 0; c < co; ++c) {
                        T acc = T(0);
                        const T* row = nd.grad.data() + i * co * ovox + c * ovox;
                        for (int64_t o = 0; o < ovox; ++o) acc += row[o];
                        bg[c] += acc;
                    }
                }
            }
        });
}

}  // namespace cswin
