#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <vector>

#include "cswin/rng.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// Synthetic volumetric phantoms standing in for preprocessed bpMRI cases.
// Channels mimic the modality roles: lesions are bright on the DWI analog,
// dark on the ADC analog, slightly dark on T2W. The scene keeps a consistent
// anatomical orientation (an intensity ramp plus an off-center organ), so
// rotation pretext labels are inferable, as they are for real anatomy.

struct LesionSpec {
    std::array<double, 3> center;   // voxel coordinates (h,w,d)
    std::array<double, 3> radii;    // voxel units
    std::array<double, 3> contrast; // additive per channel
};

struct SynthConfig {
    Dims3 shape{32, 32, 32};  // (H,W,D)
    std::array<double, 3> spacing{0.45, 0.45, 1.8};
    double negative_fraction = 0.3;
    int64_t max_lesions = 3;
    std::array<double, 2> lesion_radius_inplane{3.5, 6.0};
    std::array<double, 2> lesion_radius_depth{2.0, 3.5};
    double noise_sigma = 0.10;
    double bias_amplitude = 0.08;

    nlohmann::json to_json() const {
        return {{"shape", shape},
                {"spacing", spacing},
                {"negative_fraction", negative_fraction},
                {"max_lesions", max_lesions},
                {"lesion_radius_inplane", lesion_radius_inplane},
                {"lesion_radius_depth", lesion_radius_depth},
                {"noise_sigma", noise_sigma},
                {"bias_amplitude", bias_amplitude}};
    }
    static SynthConfig from_json(const nlohmann::json& j) {
        SynthConfig c;
        if (j.contains("shape")) c.shape = j.at("shape");
        if (j.contains("spacing")) c.spacing = j.at("spacing");
        if (j.contains("negative_fraction")) c.negative_fraction = j.at("negative_fraction");
        if (j.contains("max_lesions")) c.max_lesions = j.at("max_lesions");
        if (j.contains("lesion_radius_inplane"))
            c.lesion_radius_inplane = j.at("lesion_radius_inplane");
        if (j.contains("lesion_radius_depth")) c.lesion_radius_depth = j.at("lesion_radius_depth");
        if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma");
        if (j.contains("bias_amplitude")) c.bias_amplitude = j.at("bias_amplitude");
        return c;
    }
};

struct Phantom {
    Volume volume;  // 3 channels
    Volume mask;    // 1 channel, 0/1
    std::vector<LesionSpec> lesions;
    bool positive = false;
};

namespace detail {

struct Bump {
    std::array<double, 3> c;
    std::array<double, 3> inv2s2;  // 1/(2 sigma^2) per axis
    double amp;
};

inline double bump_value(const Bump& b, double h, double w, double d) {
    const double dh = h - b.c[0], dw = w - b.c[1], dd = d - b.c[2];
    return b.amp *
           std::exp(-(dh * dh * b.inv2s2[0] + dw * dw * b.inv2s2[1] + dd * dd * b.inv2s2[2]));
}

}  // namespace detail

// Deterministic per (seed, index); identical arguments reproduce the phantom
// bit for bit.
inline Phantom make_phantom(const SynthConfig& cfg, uint64_t seed, int64_t index) {
    if (cfg.shape[0] < 16 || cfg.shape[1] < 16 || cfg.shape[2] < 8)
        throw value_error("make_phantom: volume too small for the phantom scene");
    Rng rng = Rng(seed).child("phantom", static_cast<uint64_t>(index));
    const double H = static_cast<double>(cfg.shape[0]);
    const double W = static_cast<double>(cfg.shape[1]);
    const double D = static_cast<double>(cfg.shape[2]);

    Phantom ph;
    ph.volume = Volume::zeros({3, cfg.shape[0], cfg.shape[1], cfg.shape[2]}, cfg.spacing);
    ph.volume.channels = {"T2W", "DWI", "ADC"};
    ph.volume.preprocessed = true;  // phantoms are network-ready analogs
    ph.mask = Volume::zeros({1, cfg.shape[0], cfg.shape[1], cfg.shape[2]}, cfg.spacing);
    ph.mask.channels = {"GT"};

    // fixed anterior-posterior intensity ramp per channel: the orientation cue
    const double ramp[3] = {0.6, 0.5, -0.5};

    // organ ellipsoid, shifted anterior (+H)
    std::array<double, 3> oc{0.5 * H + 0.12 * H + rng.uniform(-0.03, 0.03) * H,
                             0.5 * W + rng.uniform(-0.03, 0.03) * W,
                             0.5 * D + rng.uniform(-0.03, 0.03) * D};
    std::array<double, 3> orad{0.28 * H * rng.uniform(0.9, 1.1), 0.30 * W * rng.uniform(0.9, 1.1),
                               0.34 * D * rng.uniform(0.9, 1.1)};
    const double organ_level[3] = {0.35, 0.25, -0.30};

    // posterior structure, a second orientation cue
    detail::Bump post;
    post.c = {0.16 * H, 0.5 * W + rng.uniform(-0.05, 0.05) * W, 0.5 * D};
    post.inv2s2 = {1.0 / (2.0 * 0.01 * H * H), 1.0 / (2.0 * 0.02 * W * W),
                   1.0 / (2.0 * 0.05 * D * D)};
    post.amp = 1.0;
    const double post_level[3] = {0.30, -0.20, 0.20};

    // correlated smooth texture: shared bumps, channel-specific gains
    std::vector<detail::Bump> bumps;
    for (int i = 0; i < 5; ++i) {
        detail::Bump b;
        b.c = {rng.uniform(0.0, H), rng.uniform(0.0, W), rng.uniform(0.0, D)};
        const double sh = rng.uniform(3.0, 8.0), sw = rng.uniform(3.0, 8.0);
        const double sd = rng.uniform(3.0, 8.0) * D / H;
        b.inv2s2 = {1.0 / (2.0 * sh * sh), 1.0 / (2.0 * sw * sw),
                    1.0 / (2.0 * std::max(1.0, sd) * std::max(1.0, sd))};
        b.amp = rng.uniform(-0.35, 0.35);
        bumps.push_back(b);
    }
    const double texture_gain[3] = {1.0, 0.8, -0.6};

    // per-channel multiplicative bias fields: exp of a random quadratic
    std::array<std::array<double, 9>, 3> bias;
    for (auto& coeffs : bias)
        for (auto& c : coeffs) c = rng.uniform(-cfg.bias_amplitude, cfg.bias_amplitude);

    ph.positive = rng.uniform() >= cfg.negative_fraction;
    if (ph.positive) {
        const int64_t want = 1 + rng.randint(0, cfg.max_lesions);
        for (int64_t li = 0; li < want; ++li) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                LesionSpec l;
                l.radii = {rng.uniform(cfg.lesion_radius_inplane[0], cfg.lesion_radius_inplane[1]),
                           rng.uniform(cfg.lesion_radius_inplane[0], cfg.lesion_radius_inplane[1]),
                           rng.uniform(cfg.lesion_radius_depth[0], cfg.lesion_radius_depth[1])};
                l.center = {oc[0] + rng.uniform(-0.55, 0.55) * orad[0],
                            oc[1] + rng.uniform(-0.55, 0.55) * orad[1],
                            oc[2] + rng.uniform(-0.55, 0.55) * orad[2]};
                l.contrast = {-rng.uniform(0.3, 0.7), rng.uniform(1.2, 1.8),
                              -rng.uniform(1.2, 1.8)};
                bool ok = true;
                const double lim[3] = {H, W, D};
                for (int d = 0; d < 3; ++d)
                    if (l.center[d] - l.radii[d] < 1.0 || l.center[d] + l.radii[d] > lim[d] - 2.0)
                        ok = false;
                for (const auto& prev : ph.lesions) {
                    double dist = 0.0, rsum = 0.0;
                    for (int d = 0; d < 3; ++d) {
                        const double dd = l.center[d] - prev.center[d];
                        dist += dd * dd;
                        rsum += (l.radii[d] + prev.radii[d]) * (l.radii[d] + prev.radii[d]);
                    }
                    if (dist < rsum) ok = false;  // conservative non-overlap
                }
                if (ok) {
                    ph.lesions.push_back(l);
                    break;
                }
            }
        }
        if (ph.lesions.empty()) ph.positive = false;  // placement failed everywhere
    }

    for (int64_t h = 0; h < cfg.shape[0]; ++h) {
        const double hh = static_cast<double>(h);
        for (int64_t w = 0; w < cfg.shape[1]; ++w) {
            const double ww = static_cast<double>(w);
            for (int64_t d = 0; d < cfg.shape[2]; ++d) {
                const double dd = static_cast<double>(d);
                const double oh = (hh - oc[0]) / orad[0];
                const double ow = (ww - oc[1]) / orad[1];
                const double od = (dd - oc[2]) / orad[2];
                const double rho2 = oh * oh + ow * ow + od * od;
                // soft organ boundary between rho = 0.85 and 1.15
                double organ = 0.0;
                if (rho2 < 1.3225) {
                    organ = rho2 <= 0.7225
                                ? 1.0
                                : std::min(1.0, std::max(0.0, (1.3225 - rho2) / (1.3225 - 0.7225)));
                }
                double texture = 0.0;
                for (const auto& b : bumps) texture += detail::bump_value(b, hh, ww, dd);
                const double pv = detail::bump_value(post, hh, ww, dd);

                double lesion_s = 0.0;
                if (!ph.lesions.empty()) {
                    for (const auto& l : ph.lesions) {
                        const double lh = (hh - l.center[0]) / l.radii[0];
                        const double lw = (ww - l.center[1]) / l.radii[1];
                        const double ld = (dd - l.center[2]) / l.radii[2];
                        const double lr2 = lh * lh + lw * lw + ld * ld;
                        if (lr2 <= 1.0) {
                            ph.mask.at(0, h, w, d) = 1.0f;
                            lesion_s = 1.0;
                        } else if (lr2 <= 1.4 && lesion_s < 1.0) {
                            lesion_s = std::max(lesion_s, (1.4 - lr2) / 0.4);
                        }
                        if (lesion_s >= 1.0) break;
                    }
                }

                const double nh = hh / H - 0.5, nw = ww / W - 0.5, nd = dd / D - 0.5;
                for (int c = 0; c < 3; ++c) {
                    double val = ramp[c] * nh + organ * organ_level[c] + pv * post_level[c] +
                                 texture_gain[c] * texture;
                    if (lesion_s > 0.0) {
                        // recompute the per-lesion contrast contribution
                        for (const auto& l : ph.lesions) {
                            const double lh = (hh - l.center[0]) / l.radii[0];
                            const double lw = (ww - l.center[1]) / l.radii[1];
                            const double ld = (dd - l.center[2]) / l.radii[2];
                            const double lr2 = lh * lh + lw * lw + ld * ld;
                            double s = 0.0;
                            if (lr2 <= 1.0)
                                s = 1.0;
                            else if (lr2 <= 1.4)
                                s = (1.4 - lr2) / 0.4;
                            val += s * l.contrast[c];
                        }
                    }
                    val += rng.normal(0.0, cfg.noise_sigma);
                    const auto& q = bias[c];
                    const double field = q[0] * nh + q[1] * nw + q[2] * nd + q[3] * nh * nw +
                                         q[4] * nh * nd + q[5] * nw * nd + q[6] * nh * nh +
                                         q[7] * nw * nw + q[8] * nd * nd;
                    val *= std::exp(field);
                    ph.volume.at(c, h, w, d) = static_cast<float>(val);
                }
            }
        }
    }
    return ph;
}

// 4/3 pi abc, in voxels; the discretized mask count stays within ~10% for
// the default radius ranges.
inline double analytic_lesion_volume(const LesionSpec& l) {
    return 4.0 / 3.0 * 3.14159265358979323846 * l.radii[0] * l.radii[1] * l.radii[2];
}

}  // namespace cswin
