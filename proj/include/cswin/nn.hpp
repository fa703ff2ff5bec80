#pragma once

#include <string>
#include <vector>

#include "cswin/conv.hpp"
#include "cswin/ops.hpp"
#include "cswin/params.hpp"

namespace cswin {

// Small trainable building blocks. Each registers its tensors in the
// ParamStore under `prefix` and keeps handles for forward().

template <class T>
struct Linear {
    Tensor<T> w, b;  // w is (in, out)

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out, Rng rng) {
        w = ps.create(prefix + ".w", {in, out});
        b = ps.create(prefix + ".b", {out});
        fill_trunc_normal(w, rng, 0.02);
    }

    // x (rows, in) -> (rows, out)
    Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w), b); }
};

// Normalizes over the feature axis of a (..., C, spatial...) tensor;
// `axis` names the channel axis.
template <class T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    size_t axis = 1;
    T eps = T(1e-5);

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& prefix, int64_t dim, size_t channel_axis)
        : axis(channel_axis) {
        Shape s;  // broadcastable against the input: 1s everywhere except the channel axis
        gamma = ps.create(prefix + ".g", {dim});
        beta = ps.create(prefix + ".b", {dim});
        fill_constant(gamma, T(1));
        (void)s;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto mu = mean_axes(x, {axis});
        auto xc = sub(x, mu);
        auto var = mean_axes(mul(xc, xc), {axis});
        auto y = div(xc, sqrt(add_scalar(var, eps)));
        // reshape affine params so they broadcast over the channel axis
        Shape bs(x.rank(), 1);
        bs[axis] = gamma.dim(0);
        return add(mul(y, reshape(gamma, bs)), reshape(beta, bs));
    }
};

// Instance norm over the spatial axes of (N,C,H,W,D), affine per channel.
template <class T>
struct InstanceNorm3d {
    Tensor<T> gamma, beta;
    T eps = T(1e-5);

    InstanceNorm3d() = default;
    InstanceNorm3d(ParamStore<T>& ps, const std::string& prefix, int64_t channels) {
        gamma = ps.create(prefix + ".g", {channels});
        beta = ps.create(prefix + ".b", {channels});
        fill_constant(gamma, T(1));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 5)
            throw shape_error("InstanceNorm3d: expected (N,C,H,W,D), got " + shape_str(x.shape()));
        auto mu = mean_axes(x, {2, 3, 4});
        auto xc = sub(x, mu);
        auto var = mean_axes(mul(xc, xc), {2, 3, 4});
        auto y = div(xc, sqrt(add_scalar(var, eps)));
        Shape bs{1, gamma.dim(0), 1, 1, 1};
        return add(mul(y, reshape(gamma, bs)), reshape(beta, bs));
    }
};

template <class T>
struct Conv3d {
    Tensor<T> w, b;
    Dims3 stride{1, 1, 1}, padding{0, 0, 0};

    Conv3d() = default;
    Conv3d(ParamStore<T>& ps, const std::string& prefix, int64_t ci, int64_t co, Dims3 kernel,
           Dims3 stride_, Dims3 padding_, Rng rng)
        : stride(stride_), padding(padding_) {
        w = ps.create(prefix + ".w", {co, ci, kernel[0], kernel[1], kernel[2]});
        b = ps.create(prefix + ".b", {co});
        fill_kaiming(w, rng, ci * kernel[0] * kernel[1] * kernel[2]);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv3d(x, w, b, stride, padding); }
};

template <class T>
struct ConvTranspose3d {
    Tensor<T> w, b;
    Dims3 stride{1, 1, 1}, padding{0, 0, 0};

    ConvTranspose3d() = default;
    ConvTranspose3d(ParamStore<T>& ps, const std::string& prefix, int64_t ci, int64_t co,
                    Dims3 kernel, Dims3 stride_, Dims3 padding_, Rng rng)
        : stride(stride_), padding(padding_) {
        w = ps.create(prefix + ".w", {ci, co, kernel[0], kernel[1], kernel[2]});
        b = ps.create(prefix + ".b", {co});
        fill_kaiming(w, rng, ci * kernel[0] * kernel[1] * kernel[2]);
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv_transpose3d(x, w, b, stride, padding);
    }
};

// Two 3x3x3 convolutions with instance normalization and a residual
// shortcut (1x1x1 projection when the channel count changes).
template <class T>
struct ResBlock3d {
    Conv3d<T> conv1, conv2;
    InstanceNorm3d<T> norm1, norm2;
    Conv3d<T> shortcut;
    bool project = false;

    ResBlock3d() = default;
    ResBlock3d(ParamStore<T>& ps, const std::string& prefix, int64_t ci, int64_t co, Rng rng) {
        conv1 = Conv3d<T>(ps, prefix + ".conv1", ci, co, {3, 3, 3}, {1, 1, 1}, {1, 1, 1},
                          rng.child("conv1"));
        norm1 = InstanceNorm3d<T>(ps, prefix + ".in1", co);
        conv2 = Conv3d<T>(ps, prefix + ".conv2", co, co, {3, 3, 3}, {1, 1, 1}, {1, 1, 1},
                          rng.child("conv2"));
        norm2 = InstanceNorm3d<T>(ps, prefix + ".in2", co);
        project = ci != co;
        if (project)
            shortcut = Conv3d<T>(ps, prefix + ".proj", ci, co, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                                 rng.child("proj"));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto h = relu(norm1.forward(conv1.forward(x)));
        h = norm2.forward(conv2.forward(h));
        auto s = project ? shortcut.forward(x) : x;
        return relu(add(h, s));
    }
};

// Token-wise two-layer MLP with GELU, applied to the channel axis of a
// (N,C,H,W,D) grid.
template <class T>
struct TokenMlp {
    Linear<T> fc1, fc2;

    TokenMlp() = default;
    TokenMlp(ParamStore<T>& ps, const std::string& prefix, int64_t dim, int64_t hidden, Rng rng) {
        fc1 = Linear<T>(ps, prefix + ".fc1", dim, hidden, rng.child("fc1"));
        fc2 = Linear<T>(ps, prefix + ".fc2", hidden, dim, rng.child("fc2"));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), d = x.dim(4);
        auto t = reshape(permute(x, {0, 2, 3, 4, 1}), {n * h * w * d, c});
        t = fc2.forward(gelu(fc1.forward(t)));
        return permute(reshape(t, {n, h, w, d, c}), {0, 4, 1, 2, 3});
    }
};

// Global average pool of (N,C,H,W,D) -> (N,C).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 5)
        throw shape_error("global_avg_pool: expected (N,C,H,W,D), got " + shape_str(x.shape()));
    auto m = mean_axes(x, {2, 3, 4});
    return reshape(m, {x.dim(0), x.dim(1)});
}

}  // namespace cswin
