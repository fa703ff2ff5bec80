#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "cswin/attention.hpp"
#include "cswin/nn.hpp"
#include "cswin/params.hpp"

namespace cswin {

// Architecture knobs. Defaults follow the reference setup: base width 48,
// four stages with doubling widths, heads (3,6,12,24), stripe widths
// (1,2,5,5), cosine attention on. `strides` lists the per-axis stride of the
// five downsampling convolutions (two token-embedding convs, then the merge
// conv before stages 2-4); an axis whose extent must be preserved uses 1.
struct ModelConfig {
    std::array<int64_t, 4> input_shape{3, 160, 160, 32};  // (C,H,W,D)
    int64_t base_dim = 48;
    std::array<int64_t, 4> depths{1, 2, 4, 1};
    std::array<int64_t, 4> heads{3, 6, 12, 24};
    std::array<int64_t, 4> sw{1, 2, 5, 5};
    bool use_cosine = true;
    int64_t mlp_ratio = 4;
    int64_t num_classes = 2;
    std::array<Dims3, 5> strides{{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}}};

    // Required divisor of each input axis: the product of its five strides.
    Dims3 required_multiple() const {
        Dims3 m{1, 1, 1};
        for (const auto& s : strides)
            for (int d = 0; d < 3; ++d) m[d] *= s[d];
        return m;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["input_shape"] = input_shape;
        j["base_dim"] = base_dim;
        j["depths"] = depths;
        j["heads"] = heads;
        j["sw"] = sw;
        j["use_cosine"] = use_cosine;
        j["mlp_ratio"] = mlp_ratio;
        j["num_classes"] = num_classes;
        j["strides"] = strides;
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        if (j.contains("input_shape")) c.input_shape = j.at("input_shape");
        if (j.contains("base_dim")) c.base_dim = j.at("base_dim");
        if (j.contains("depths")) c.depths = j.at("depths");
        if (j.contains("heads")) c.heads = j.at("heads");
        if (j.contains("sw")) c.sw = j.at("sw");
        if (j.contains("use_cosine")) c.use_cosine = j.at("use_cosine");
        if (j.contains("mlp_ratio")) c.mlp_ratio = j.at("mlp_ratio");
        if (j.contains("num_classes")) c.num_classes = j.at("num_classes");
        if (j.contains("strides")) c.strides = j.at("strides");
        return c;
    }
};

struct StageConfig {
    int64_t depth = 1;
    int64_t heads = 3;
    int64_t sw = 1;
    int64_t feature_dim = 48;
    Dims3 grid{0, 0, 0};
};

template <class T>
struct EncodeResult {
    Tensor<T> input;                  // raw network input (N,C,H,W,D)
    Tensor<T> half;                   // token-embed features at 1/2 resolution
    std::array<Tensor<T>, 4> stages;  // outputs at 1/4, 1/8, 1/16, 1/32
    Tensor<T> bottleneck;             // deepest features (== stages[3])
};

// CSwin UNet: overlapped convolutional token embedding, four CSwin stages
// with stride-2 merges, CNN decoder with per-stage residual skips, softmax
// segmentation head.
template <class T>
class CSwinUNet {
  public:
    CSwinUNet(const ModelConfig& cfg, uint64_t seed, bool encoder_only = false)
        : cfg_(cfg), store_(seed), encoder_only_(encoder_only) {
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    bool encoder_only() const { return encoder_only_; }
    const std::array<StageConfig, 4>& stage_configs() const { return stage_cfgs_; }
    int64_t parameter_count() const { return store_.parameter_count(); }

    EncodeResult<T> encode(const Tensor<T>& x) const {
        validate_input(x);
        EncodeResult<T> r;
        r.input = x;
        r.half = embed_ln1_.forward(embed1_.forward(x));
        auto h = embed_ln2_.forward(embed2_.forward(r.half));
        for (int i = 0; i < 4; ++i) {
            if (i > 0) h = merge_ln_[i - 1].forward(merge_[i - 1].forward(h));
            for (const auto& blk : blocks_[i]) h = blk.forward(h);
            r.stages[i] = h;
        }
        r.bottleneck = r.stages[3];
        return r;
    }

    // Per-voxel class probability map (N,num_classes,H,W,D); softmax over
    // the class axis.
    Tensor<T> decode(const EncodeResult<T>& enc) const {
        if (encoder_only_) throw config_error("decode: model was built encoder-only");
        for (int i = 0; i < 4; ++i)
            if (!enc.stages[i].defined())
                throw shape_error("decode: missing stage features");
        auto d = dec_bottleneck_.forward(enc.stages[3]);
        const Tensor<T>* skips[5] = {&enc.stages[2], &enc.stages[1], &enc.stages[0], &enc.half,
                                     &enc.input};
        for (int i = 0; i < 5; ++i) {
            d = dec_up_[i].forward(d);
            auto s = dec_skip_[i].forward(*skips[i]);
            if (s.dim(2) != d.dim(2) || s.dim(3) != d.dim(3) || s.dim(4) != d.dim(4))
                throw shape_error("decode: skip features " + shape_str(s.shape()) +
                                  " do not match upsampled " + shape_str(d.shape()));
            d = dec_fuse_[i].forward(concat<T>({d, s}, 1));
        }
        auto logits = head_.forward(d);
        return softmax(logits, 1);
    }

    Tensor<T> forward(const Tensor<T>& x) const { return decode(encode(x)); }

    // Class-1 confidence per voxel, shape (N,H,W,D).
    Tensor<T> detection_map(const Tensor<T>& x) const {
        auto probs = forward(x);
        auto fg = slice(probs, 1, 1, 1);
        return reshape(fg, {probs.dim(0), probs.dim(2), probs.dim(3), probs.dim(4)});
    }

  private:
    void validate_input(const Tensor<T>& x) const {
        if (x.rank() != 5)
            throw shape_error("encode: expected (N,C,H,W,D), got " + shape_str(x.shape()));
        if (x.dim(1) != cfg_.input_shape[0])
            throw shape_error("encode: expected " + std::to_string(cfg_.input_shape[0]) +
                              " channels, got input " + shape_str(x.shape()));
        Dims3 mult = cfg_.required_multiple();
        for (int d = 0; d < 3; ++d) {
            int64_t e = x.dim(2 + d);
            if (e != cfg_.input_shape[d + 1])
                throw shape_error("encode: input " + shape_str(x.shape()) +
                                  " does not match configured spatial shape");
            if (e % mult[d] != 0)
                throw shape_error("encode: spatial extent " + std::to_string(e) + " on axis " +
                                  std::to_string(d) + " must be a multiple of " +
                                  std::to_string(mult[d]));
        }
    }

    void build() {
        Dims3 mult = cfg_.required_multiple();
        for (int d = 0; d < 3; ++d)
            if (cfg_.input_shape[d + 1] % mult[d] != 0)
                throw config_error("ModelConfig: spatial extent " +
                                   std::to_string(cfg_.input_shape[d + 1]) + " on axis " +
                                   std::to_string(d) + " must be a multiple of " +
                                   std::to_string(mult[d]));

        Rng rng(store_.seed());
        const int64_t cin = cfg_.input_shape[0];
        const int64_t f = cfg_.base_dim;

        Dims3 g{cfg_.input_shape[1], cfg_.input_shape[2], cfg_.input_shape[3]};
        auto shrink = [](Dims3 g, Dims3 s) {
            return Dims3{g[0] / s[0], g[1] / s[1], g[2] / s[2]};
        };
        // overlapped token embedding: kernel 7 stride 2 pad 3, then kernel 3
        // stride 2 pad 1, landing at 1/4 resolution with width F
        embed1_ = Conv3d<T>(store_, "enc.embed1", cin, f, {7, 7, 7}, cfg_.strides[0], {3, 3, 3},
                            rng.child("embed1"));
        embed_ln1_ = LayerNorm<T>(store_, "enc.embed1.ln", f, 1);
        g = shrink(g, cfg_.strides[0]);
        embed2_ = Conv3d<T>(store_, "enc.embed2", f, f, {3, 3, 3}, cfg_.strides[1], {1, 1, 1},
                            rng.child("embed2"));
        embed_ln2_ = LayerNorm<T>(store_, "enc.embed2.ln", f, 1);
        g = shrink(g, cfg_.strides[1]);

        int64_t dim = f;
        for (int i = 0; i < 4; ++i) {
            if (i > 0) {
                std::string p = "enc.merge" + std::to_string(i + 1);
                merge_[i - 1] = Conv3d<T>(store_, p, dim, dim * 2, {3, 3, 3}, cfg_.strides[i + 1],
                                          {1, 1, 1}, rng.child(p));
                merge_ln_[i - 1] = LayerNorm<T>(store_, p + ".ln", dim * 2, 1);
                dim *= 2;
                g = shrink(g, cfg_.strides[i + 1]);
            }
            stage_cfgs_[i] = StageConfig{cfg_.depths[i], cfg_.heads[i], cfg_.sw[i], dim, g};
            CSwinBlockConfig bc;
            bc.channels = dim;
            bc.heads = cfg_.heads[i];
            bc.sw = cfg_.sw[i];
            bc.grid = g;
            bc.use_cosine = cfg_.use_cosine;
            bc.mlp_ratio = cfg_.mlp_ratio;
            blocks_[i].clear();
            for (int64_t b = 0; b < cfg_.depths[i]; ++b) {
                std::string p = "enc.s" + std::to_string(i + 1) + ".b" + std::to_string(b);
                blocks_[i].emplace_back(store_, p, bc, rng.child(p));
            }
        }
        if (encoder_only_) return;

        // decoder mirrors the encoder widths; each skip is processed by its
        // own residual block before concatenation
        dec_bottleneck_ = ResBlock3d<T>(store_, "dec.bottleneck", 8 * f, 8 * f, rng.child("dec.bn"));
        const int64_t up_ci[5] = {8 * f, 4 * f, 2 * f, f, f};
        const int64_t up_co[5] = {4 * f, 2 * f, f, f, f};
        const int64_t skip_ci[5] = {4 * f, 2 * f, f, f, cin};
        for (int i = 0; i < 5; ++i) {
            Dims3 s = cfg_.strides[4 - i];  // invert the downsampling ladder
            std::string p = "dec.up" + std::to_string(i);
            dec_up_[i] = ConvTranspose3d<T>(store_, p, up_ci[i], up_co[i], s, s, {0, 0, 0},
                                            rng.child(p));
            dec_skip_[i] = ResBlock3d<T>(store_, "dec.skip" + std::to_string(i), skip_ci[i],
                                         up_co[i], rng.child("dec.skip" + std::to_string(i)));
            dec_fuse_[i] = ResBlock3d<T>(store_, "dec.fuse" + std::to_string(i), 2 * up_co[i],
                                         up_co[i], rng.child("dec.fuse" + std::to_string(i)));
        }
        head_ = Conv3d<T>(store_, "dec.head", f, cfg_.num_classes, {1, 1, 1}, {1, 1, 1}, {0, 0, 0},
                          rng.child("head"));
    }

    ModelConfig cfg_;
    ParamStore<T> store_;
    bool encoder_only_;

    Conv3d<T> embed1_, embed2_;
    LayerNorm<T> embed_ln1_, embed_ln2_;
    std::array<Conv3d<T>, 3> merge_;
    std::array<LayerNorm<T>, 3> merge_ln_;
    std::array<std::vector<CSwinBlock<T>>, 4> blocks_;
    std::array<StageConfig, 4> stage_cfgs_;

    ResBlock3d<T> dec_bottleneck_;
    std::array<ConvTranspose3d<T>, 5> dec_up_;
    std::array<ResBlock3d<T>, 5> dec_skip_;
    std::array<ResBlock3d<T>, 5> dec_fuse_;
    Conv3d<T> head_;
};

}  // namespace cswin
