#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "cswin/volume.hpp"

namespace cswin {

// Geometric conforming + intensity normalization. Resampling uses an
// interpolating tri-cubic (Catmull-Rom) kernel, so sampling a grid at its own
// knots is an exact identity. Voxel centers are the coordinate anchors and
// resampling is center-aligned.

struct PreprocessConfig {
    std::array<double, 3> target_spacing{0.5, 0.5, 3.6};  // mm along H,W,D
    Dims3 crop{144, 144, 16};
    Dims3 out_shape{160, 160, 32};
    // per-scan z-score applies to channels 0..1; channel 2 (ADC analog) uses
    // these fixed constants
    double adc_mean = 0.0;
    double adc_std = 1.0;

    nlohmann::json to_json() const {
        return {{"target_spacing", target_spacing},
                {"crop", crop},
                {"out_shape", out_shape},
                {"adc_mean", adc_mean},
                {"adc_std", adc_std}};
    }
    static PreprocessConfig from_json(const nlohmann::json& j) {
        PreprocessConfig c;
        if (j.contains("target_spacing")) c.target_spacing = j.at("target_spacing");
        if (j.contains("crop")) c.crop = j.at("crop");
        if (j.contains("out_shape")) c.out_shape = j.at("out_shape");
        if (j.contains("adc_mean")) c.adc_mean = j.at("adc_mean");
        if (j.contains("adc_std")) c.adc_std = j.at("adc_std");
        return c;
    }
};

namespace detail {

// Catmull-Rom kernel (a = -1/2); k(0)=1 and k(n)=0 at other integers.
inline double cubic_kernel(double x) {
    x = std::fabs(x);
    if (x < 1.0) return ((1.5 * x - 2.5) * x) * x + 1.0;
    if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
    return 0.0;
}

inline int64_t clamp_index(int64_t i, int64_t n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Tri-cubic sample of one channel at fractional voxel coordinates; borders
// clamp.
inline double sample_tricubic(const float* ch, const Dims3& dims, double fh, double fw, double fd) {
    const int64_t h0 = static_cast<int64_t>(std::floor(fh));
    const int64_t w0 = static_cast<int64_t>(std::floor(fw));
    const int64_t d0 = static_cast<int64_t>(std::floor(fd));
    double wh[4], ww[4], wd[4];
    for (int i = 0; i < 4; ++i) {
        wh[i] = cubic_kernel(fh - static_cast<double>(h0 - 1 + i));
        ww[i] = cubic_kernel(fw - static_cast<double>(w0 - 1 + i));
        wd[i] = cubic_kernel(fd - static_cast<double>(d0 - 1 + i));
    }
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
        const int64_t h = clamp_index(h0 - 1 + i, dims[0]);
        for (int j = 0; j < 4; ++j) {
            const int64_t w = clamp_index(w0 - 1 + j, dims[1]);
            const float* row = ch + (h * dims[1] + w) * dims[2];
            double a = 0.0;
            for (int l = 0; l < 4; ++l) a += wd[l] * row[clamp_index(d0 - 1 + l, dims[2])];
            acc += wh[i] * ww[j] * a;
        }
    }
    return acc;
}

// Center-aligned resample onto a new grid; scale[d] = out-voxel width in
// input voxels.
inline Volume resample_grid(const Volume& v, Dims3 out, std::array<double, 3> scale,
                            std::array<double, 3> out_spacing) {
    Volume r = Volume::zeros({v.C(), out[0], out[1], out[2]}, out_spacing);
    r.channels = v.channels;
    const Dims3 in{v.H(), v.W(), v.D()};
    std::array<double, 3> off;
    for (int d = 0; d < 3; ++d)
        off[d] = 0.5 * static_cast<double>(in[d] - 1) -
                 scale[d] * 0.5 * static_cast<double>(out[d] - 1);
    for (int64_t c = 0; c < v.C(); ++c) {
        const float* ch = v.data.data() + c * v.voxels();
        float* dst = r.data.data() + c * r.voxels();
        for (int64_t h = 0; h < out[0]; ++h) {
            const double fh = off[0] + scale[0] * static_cast<double>(h);
            for (int64_t w = 0; w < out[1]; ++w) {
                const double fw = off[1] + scale[1] * static_cast<double>(w);
                for (int64_t d = 0; d < out[2]; ++d) {
                    const double fd = off[2] + scale[2] * static_cast<double>(d);
                    *dst++ = static_cast<float>(sample_tricubic(ch, in, fh, fw, fd));
                }
            }
        }
    }
    return r;
}

}  // namespace detail

// Resample to a target physical spacing; output extents keep the field of
// view: round(n * spacing / target).
inline Volume resample_to_spacing(const Volume& v, std::array<double, 3> target) {
    Dims3 out;
    std::array<double, 3> scale;
    for (int d = 0; d < 3; ++d) {
        if (!(target[d] > 0)) throw value_error("resample: target spacing must be positive");
        const int64_t n = v.shape[d + 1];
        out[d] = std::max<int64_t>(
            1, llround(static_cast<double>(n) * v.spacing[d] / target[d]));
        scale[d] = target[d] / v.spacing[d];
    }
    return detail::resample_grid(v, out, scale, target);
}

// Cubic resize to fixed extents; spacing rescales to keep the field of view.
inline Volume resize_to(const Volume& v, Dims3 out) {
    std::array<double, 3> scale, sp;
    for (int d = 0; d < 3; ++d) {
        scale[d] = static_cast<double>(v.shape[d + 1]) / static_cast<double>(out[d]);
        sp[d] = v.spacing[d] * scale[d];
    }
    return detail::resample_grid(v, out, scale, sp);
}

// Center crop; volumes smaller than the crop are zero padded symmetrically
// first (a warning is recorded for the caller).
inline Volume center_crop(const Volume& v, Dims3 out, std::vector<std::string>* warnings = nullptr) {
    Volume src = v;
    for (int d = 0; d < 3; ++d) {
        if (src.shape[d + 1] >= out[d]) continue;
        if (warnings)
            warnings->push_back("center_crop: axis " + std::to_string(d) + " extent " +
                                std::to_string(src.shape[d + 1]) + " smaller than crop " +
                                std::to_string(out[d]) + "; zero padded");
        Volume padded = Volume::zeros({src.C(), std::max(src.H(), out[0]),
                                       std::max(src.W(), out[1]), std::max(src.D(), out[2])},
                                      src.spacing);
        padded.channels = src.channels;
        const int64_t oh = (padded.H() - src.H()) / 2;
        const int64_t ow = (padded.W() - src.W()) / 2;
        const int64_t od = (padded.D() - src.D()) / 2;
        for (int64_t c = 0; c < src.C(); ++c)
            for (int64_t h = 0; h < src.H(); ++h)
                for (int64_t w = 0; w < src.W(); ++w)
                    for (int64_t dd = 0; dd < src.D(); ++dd)
                        padded.at(c, h + oh, w + ow, dd + od) = src.at(c, h, w, dd);
        src = std::move(padded);
        break;  // single padding pass covers all axes
    }
    Volume r = Volume::zeros({src.C(), out[0], out[1], out[2]}, src.spacing);
    r.channels = src.channels;
    const int64_t oh = (src.H() - out[0]) / 2;
    const int64_t ow = (src.W() - out[1]) / 2;
    const int64_t od = (src.D() - out[2]) / 2;
    for (int64_t c = 0; c < src.C(); ++c)
        for (int64_t h = 0; h < out[0]; ++h)
            for (int64_t w = 0; w < out[1]; ++w)
                for (int64_t d = 0; d < out[2]; ++d)
                    r.at(c, h, w, d) = src.at(c, h + oh, w + ow, d + od);
    return r;
}

// z-score channels in place: per-scan statistics for channels 0..1, fixed
// global constants for channel 2. Constant channels collapse to zero (the
// std is clamped at 1e-8).
inline void zscore_channels(Volume& v, double adc_mean, double adc_std) {
    for (int64_t c = 0; c < v.C(); ++c) {
        float* ch = v.data.data() + c * v.voxels();
        const int64_t n = v.voxels();
        if (c == 2) {
            const double inv = 1.0 / std::max(adc_std, 1e-8);
            for (int64_t i = 0; i < n; ++i)
                ch[i] = static_cast<float>((ch[i] - adc_mean) * inv);
            continue;
        }
        double mu = 0.0;
        for (int64_t i = 0; i < n; ++i) mu += ch[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double d = ch[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::max(std::sqrt(var), 1e-8);
        for (int64_t i = 0; i < n; ++i) ch[i] = static_cast<float>((ch[i] - mu) * inv);
    }
}

// Full pipeline: resample to target spacing, center crop, resize to the
// network input shape, z-score. Outputs are flagged `preprocessed`, and a
// flagged input passes through unchanged, which makes the pipeline a
// projection (resize and the fixed ADC z-score are not idempotent on their
// own).
inline Volume preprocess(const Volume& v, const PreprocessConfig& cfg,
                         std::vector<std::string>* warnings = nullptr) {
    if (v.preprocessed) return v;
    Volume r = resample_to_spacing(v, cfg.target_spacing);
    r = center_crop(r, cfg.crop, warnings);
    r = resize_to(r, cfg.out_shape);
    zscore_channels(r, cfg.adc_mean, cfg.adc_std);
    r.preprocessed = true;
    return r;
}

}  // namespace cswin
