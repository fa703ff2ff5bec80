#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <vector>

#include "cswin/rng.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// Self-supervised augmentation pipeline. Per view:
//   rotate (k*90 deg about z) -> contrast/gamma/blur -> multiplicative bias
//   field -> [restoration target recorded] -> cutout -> patch shuffling
// The destructive steps come last so the input equals the target exactly
// outside the corruption mask.

struct AugmentConfig {
    std::array<double, 2> cutout_ratio{0.10, 0.48};
    int64_t shuffle_patches = 14;
    Dims3 patch_extent{12, 12, 4};
    std::array<double, 2> gamma_range{0.7, 1.4};
    std::array<double, 2> contrast_range{0.75, 1.25};
    double blur_sigma_max = 1.0;
    double bias_amplitude = 0.12;

    nlohmann::json to_json() const {
        return {{"cutout_ratio", cutout_ratio},
                {"shuffle_patches", shuffle_patches},
                {"patch_extent", patch_extent},
                {"gamma_range", gamma_range},
                {"contrast_range", contrast_range},
                {"blur_sigma_max", blur_sigma_max},
                {"bias_amplitude", bias_amplitude}};
    }
    static AugmentConfig from_json(const nlohmann::json& j) {
        AugmentConfig c;
        if (j.contains("cutout_ratio")) c.cutout_ratio = j.at("cutout_ratio");
        if (j.contains("shuffle_patches")) c.shuffle_patches = j.at("shuffle_patches");
        if (j.contains("patch_extent")) c.patch_extent = j.at("patch_extent");
        if (j.contains("gamma_range")) c.gamma_range = j.at("gamma_range");
        if (j.contains("contrast_range")) c.contrast_range = j.at("contrast_range");
        if (j.contains("blur_sigma_max")) c.blur_sigma_max = j.at("blur_sigma_max");
        if (j.contains("bias_amplitude")) c.bias_amplitude = j.at("bias_amplitude");
        return c;
    }
};

struct AugmentedView {
    Volume input;               // corrupted network input
    Volume original;            // restoration target (pre-corruption)
    std::vector<uint8_t> mask;  // voxelwise: 1 where cut out or shuffled
    int rot_label = 0;          // view rotated by rot_label * 90 deg about z
};

struct AugmentedPair {
    AugmentedView a, b;
};

// Rotation by k*90 degrees about the z-axis (the H-W plane); requires H == W.
inline Volume rotate90_z(const Volume& v, int k) {
    if (v.H() != v.W())
        throw value_error("rotate90_z: requires H == W, got " + shape_str(v.shape));
    k = ((k % 4) + 4) % 4;
    Volume out = v;
    const int64_t n = v.H();
    for (int step = 0; step < k; ++step) {
        Volume rot = out;
        for (int64_t c = 0; c < v.C(); ++c)
            for (int64_t h = 0; h < n; ++h)
                for (int64_t w = 0; w < n; ++w)
                    for (int64_t d = 0; d < v.D(); ++d)
                        rot.at(c, w, n - 1 - h, d) = out.at(c, h, w, d);
        out = std::move(rot);
    }
    return out;
}

namespace detail {

inline void adjust_contrast(Volume& v, double factor) {
    double mu = 0.0;
    for (float x : v.data) mu += x;
    mu /= static_cast<double>(v.data.size());
    for (auto& x : v.data) x = static_cast<float>(mu + (x - mu) * factor);
}

inline void adjust_gamma(Volume& v, double gamma) {
    float lo = v.data[0], hi = v.data[0];
    for (float x : v.data) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    if (range < 1e-8) return;
    for (auto& x : v.data) {
        const double t = (static_cast<double>(x) - lo) / range;
        x = static_cast<float>(lo + range * std::pow(t, gamma));
    }
}

inline void gaussian_blur_axis(Volume& v, int axis, double sigma) {
    if (sigma <= 0.05) return;
    const int64_t radius = std::max<int64_t>(1, llround(2.5 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double s = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        s += k[static_cast<size_t>(i + radius)];
    }
    for (auto& w : k) w /= s;

    const Dims3 dims{v.H(), v.W(), v.D()};
    Volume src = v;
    for (int64_t c = 0; c < v.C(); ++c)
        for (int64_t h = 0; h < dims[0]; ++h)
            for (int64_t w = 0; w < dims[1]; ++w)
                for (int64_t d = 0; d < dims[2]; ++d) {
                    double acc = 0.0;
                    for (int64_t i = -radius; i <= radius; ++i) {
                        int64_t p[3] = {h, w, d};
                        p[axis] = std::clamp<int64_t>(p[axis] + i, 0, dims[axis] - 1);
                        acc += k[static_cast<size_t>(i + radius)] * src.at(c, p[0], p[1], p[2]);
                    }
                    v.at(c, h, w, d) = static_cast<float>(acc);
                }
}

inline void apply_bias_field(Volume& v, Rng& rng, double amp) {
    const double H = static_cast<double>(v.H()), W = static_cast<double>(v.W()),
                 D = static_cast<double>(v.D());
    for (int64_t c = 0; c < v.C(); ++c) {
        std::array<double, 9> q;
        for (auto& x : q) x = rng.uniform(-amp, amp);
        for (int64_t h = 0; h < v.H(); ++h)
            for (int64_t w = 0; w < v.W(); ++w)
                for (int64_t d = 0; d < v.D(); ++d) {
                    const double nh = h / H - 0.5, nw = w / W - 0.5, nd = d / D - 0.5;
                    const double f = q[0] * nh + q[1] * nw + q[2] * nd + q[3] * nh * nw +
                                     q[4] * nh * nd + q[5] * nw * nd + q[6] * nh * nh +
                                     q[7] * nw * nw + q[8] * nd * nd;
                    v.at(c, h, w, d) *= static_cast<float>(std::exp(f));
                }
    }
}

// Cut-out box whose volume ratio lands inside [lo, hi]; returns offsets and
// extents.
inline std::pair<Dims3, Dims3> draw_cutout_box(const Dims3& dims, std::array<double, 2> range,
                                               Rng& rng) {
    const double vol = static_cast<double>(dims[0] * dims[1] * dims[2]);
    for (int attempt = 0; attempt < 64; ++attempt) {
        const double r = rng.uniform(range[0], range[1]);
        const double side = std::cbrt(r);
        Dims3 b;
        b[0] = std::clamp<int64_t>(llround(dims[0] * side * std::exp(rng.uniform(-0.35, 0.35))), 1,
                                   dims[0]);
        b[1] = std::clamp<int64_t>(llround(dims[1] * side * std::exp(rng.uniform(-0.35, 0.35))), 1,
                                   dims[1]);
        b[2] = std::clamp<int64_t>(llround(r * vol / static_cast<double>(b[0] * b[1])), 1, dims[2]);
        const double got = static_cast<double>(b[0] * b[1] * b[2]) / vol;
        if (got < range[0] || got > range[1]) continue;
        Dims3 off{rng.randint(0, dims[0] - b[0] + 1), rng.randint(0, dims[1] - b[1] + 1),
                  rng.randint(0, dims[2] - b[2] + 1)};
        return {off, b};
    }
    // deterministic fallback: full-plane box with the depth sized to the ratio
    const double r = 0.5 * (range[0] + range[1]);
    Dims3 b{dims[0], dims[1],
            std::clamp<int64_t>(llround(r * static_cast<double>(dims[2])), 1, dims[2])};
    Dims3 off{0, 0, rng.randint(0, dims[2] - b[2] + 1)};
    return {off, b};
}

}  // namespace detail

inline AugmentedView augment_view(const Volume& x, const AugmentConfig& cfg, Rng rng) {
    AugmentedView view;
    view.rot_label = static_cast<int>(rng.randint(0, 4));
    Volume v = rotate90_z(x, view.rot_label);

    if (rng.uniform() < 0.5)
        detail::adjust_contrast(v, rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1]));
    if (rng.uniform() < 0.5)
        detail::adjust_gamma(v, rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1]));
    if (rng.uniform() < 0.5) {
        const double sig = rng.uniform(0.3, std::max(0.31, cfg.blur_sigma_max));
        detail::gaussian_blur_axis(v, 0, sig);
        detail::gaussian_blur_axis(v, 1, sig);
        detail::gaussian_blur_axis(v, 2, 0.5 * sig);
    }
    detail::apply_bias_field(v, rng, cfg.bias_amplitude);

    view.original = v;
    view.mask.assign(static_cast<size_t>(v.voxels()), 0);
    const Dims3 dims{v.H(), v.W(), v.D()};

    // cut-out: zero a box across all channels
    auto [coff, cext] = detail::draw_cutout_box(dims, cfg.cutout_ratio, rng);
    for (int64_t h = coff[0]; h < coff[0] + cext[0]; ++h)
        for (int64_t w = coff[1]; w < coff[1] + cext[1]; ++w)
            for (int64_t d = coff[2]; d < coff[2] + cext[2]; ++d) {
                view.mask[static_cast<size_t>((h * dims[1] + w) * dims[2] + d)] = 1;
                for (int64_t c = 0; c < v.C(); ++c) v.at(c, h, w, d) = 0.0f;
            }

    // voxel shuffling inside fixed-extent patches (clipped to the volume);
    // one spatial permutation shared by all channels
    for (int64_t p = 0; p < cfg.shuffle_patches; ++p) {
        Dims3 ext{std::min(cfg.patch_extent[0], dims[0]), std::min(cfg.patch_extent[1], dims[1]),
                  std::min(cfg.patch_extent[2], dims[2])};
        Dims3 off{rng.randint(0, dims[0] - ext[0] + 1), rng.randint(0, dims[1] - ext[1] + 1),
                  rng.randint(0, dims[2] - ext[2] + 1)};
        const int64_t n = ext[0] * ext[1] * ext[2];
        std::vector<int64_t> perm(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);
        std::vector<float> buf(static_cast<size_t>(n));
        for (int64_t c = 0; c < v.C(); ++c) {
            int64_t i = 0;
            for (int64_t h = 0; h < ext[0]; ++h)
                for (int64_t w = 0; w < ext[1]; ++w)
                    for (int64_t d = 0; d < ext[2]; ++d, ++i)
                        buf[static_cast<size_t>(i)] =
                            v.at(c, off[0] + h, off[1] + w, off[2] + d);
            i = 0;
            for (int64_t h = 0; h < ext[0]; ++h)
                for (int64_t w = 0; w < ext[1]; ++w)
                    for (int64_t d = 0; d < ext[2]; ++d, ++i)
                        v.at(c, off[0] + h, off[1] + w, off[2] + d) =
                            buf[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        }
        for (int64_t h = 0; h < ext[0]; ++h)
            for (int64_t w = 0; w < ext[1]; ++w)
                for (int64_t d = 0; d < ext[2]; ++d)
                    view.mask[static_cast<size_t>(((off[0] + h) * dims[1] + off[1] + w) * dims[2] +
                                                  off[2] + d)] = 1;
    }

    view.input = std::move(v);
    return view;
}

// Two independently augmented views of one volume; deterministic in
// (volume, seed).
inline AugmentedPair augment(const Volume& x, const AugmentConfig& cfg, uint64_t seed) {
    for (float v : x.data)
        if (!std::isfinite(v)) throw value_error("augment: input volume contains non-finite values");
    Rng root(seed);
    AugmentedPair pair;
    pair.a = augment_view(x, cfg, root.child("view", 0));
    pair.b = augment_view(x, cfg, root.child("view", 1));
    return pair;
}

}  // namespace cswin
