#pragma once

#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "cswin/checkpoint.hpp"
#include "cswin/optim.hpp"
#include "cswin/unet.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// ---- losses ---------------------------------------------------------------------

// Weighted generalized dice + focal loss for binary voxelwise segmentation.
// probs (N,2,H,W,D) voxelwise-normalized, target (N,H,W,D) with values in
// {0,1}. GDL weights classes by inverse squared volume (eps-guarded); the
// focal term is mean -(1-p_true)^gamma log(p_true).
template <class T>
Tensor<T> dice_focal_loss(const Tensor<T>& probs, const Tensor<T>& target, T lambda, T gamma,
                          T eps = T(1e-5)) {
    if (probs.rank() != 5 || probs.dim(1) != 2)
        throw shape_error("dice_focal_loss: expected (N,2,H,W,D) probs, got " +
                          shape_str(probs.shape()));
    Shape want{probs.dim(0), probs.dim(2), probs.dim(3), probs.dim(4)};
    if (target.shape() != want)
        throw shape_error("dice_focal_loss: target " + shape_str(target.shape()) +
                          " does not match probs " + shape_str(probs.shape()));
    if (lambda < T(0) || lambda > T(1))
        throw value_error("dice_focal_loss: lambda must be in [0,1]");
    if (gamma < T(0)) throw value_error("dice_focal_loss: gamma must be >= 0");
    for (T v : target.data())
        if (v != T(0) && v != T(1)) throw value_error("dice_focal_loss: target must be binary");

    auto t_fg = target.detach();
    auto p_bg = reshape(slice(probs, 1, 0, 1), want);
    auto p_fg = reshape(slice(probs, 1, 1, 1), want);

    // class volumes are constants of the target
    double v_fg = 0;
    for (T v : t_fg.data()) v_fg += static_cast<double>(v);
    const double v_bg = static_cast<double>(t_fg.numel()) - v_fg;
    const T w_fg = static_cast<T>(1.0 / (v_fg * v_fg + static_cast<double>(eps)));
    const T w_bg = static_cast<T>(1.0 / (v_bg * v_bg + static_cast<double>(eps)));

    auto t_bg = add_scalar(neg(t_fg), T(1));
    auto inter = add(mul_scalar(sum(mul(p_fg, t_fg)), T(2) * w_fg),
                     mul_scalar(sum(mul(p_bg, t_bg)), T(2) * w_bg));
    auto denom = add(mul_scalar(add(sum(p_fg), sum(t_fg)), w_fg),
                     mul_scalar(add(sum(p_bg), sum(t_bg)), w_bg));
    auto gdl = add_scalar(neg(div(inter, add_scalar(denom, eps))), T(1));

    auto p_true = add(mul(p_fg, t_fg), mul(p_bg, t_bg));
    auto focal_w = pow_scalar(add_scalar(neg(p_true), T(1)), gamma);
    auto focal = neg(mean(mul(focal_w, log(clamp_min(p_true, T(1e-7))))));

    return add(mul_scalar(gdl, lambda), mul_scalar(focal, T(1) - lambda));
}

// Soft dice of the foreground channel against a binary target; a metric,
// not a loss (no gradients needed).
template <class T>
double soft_dice(const Tensor<T>& probs, const Tensor<T>& target, double eps = 1e-7) {
    Shape want{probs.dim(0), probs.dim(2), probs.dim(3), probs.dim(4)};
    if (probs.rank() != 5 || target.shape() != want)
        throw shape_error("soft_dice: incompatible shapes " + shape_str(probs.shape()) + " and " +
                          shape_str(target.shape()));
    const auto& p = probs.data();
    const auto& t = target.data();
    const int64_t vox = want[1] * want[2] * want[3];
    double inter = 0, psum = 0, tsum = 0;
    for (int64_t n = 0; n < want[0]; ++n) {
        const T* fg = p.data() + (n * 2 + 1) * vox;
        const T* tg = t.data() + n * vox;
        for (int64_t i = 0; i < vox; ++i) {
            inter += static_cast<double>(fg[i]) * static_cast<double>(tg[i]);
            psum += static_cast<double>(fg[i]);
            tsum += static_cast<double>(tg[i]);
        }
    }
    return (2.0 * inter + eps) / (psum + tsum + eps);
}

// ---- finetuning -------------------------------------------------------------------

struct FinetuneConfig {
    ModelConfig model;
    std::string init = "random";  // "random" or a pretraining checkpoint path
    int64_t epochs = 150;
    double lr = 1e-4;
    int64_t warmup_epochs = 10;
    double lambda = 0.5;  // dice/focal mix
    double gamma = 2.0;   // focal exponent
    int64_t batch = 2;
    double weight_decay = 0.01;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"model", model.to_json()},
                {"init", init},
                {"epochs", epochs},
                {"lr", lr},
                {"warmup_epochs", warmup_epochs},
                {"lambda", lambda},
                {"gamma", gamma},
                {"batch", batch},
                {"weight_decay", weight_decay},
                {"seed", seed}};
    }
    static FinetuneConfig from_json(const nlohmann::json& j) {
        FinetuneConfig c;
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("init")) c.init = j.at("init");
        if (j.contains("epochs")) c.epochs = j.at("epochs");
        if (j.contains("lr")) c.lr = j.at("lr");
        if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs");
        if (j.contains("lambda")) c.lambda = j.at("lambda");
        if (j.contains("gamma")) c.gamma = j.at("gamma");
        if (j.contains("batch")) c.batch = j.at("batch");
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay");
        if (j.contains("seed")) c.seed = j.at("seed");
        return c;
    }
};

struct FinetuneEpoch {
    int64_t epoch = 0;
    double train_loss = 0, val_loss = 0, val_dice = 0, lr = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"train_loss", train_loss},
                {"val_loss", val_loss},
                {"val_dice", val_dice},
                {"lr", lr}};
    }
};

template <class T>
struct FinetuneRun {
    std::unique_ptr<CSwinUNet<T>> model;
    std::vector<FinetuneEpoch> history;
};

// Deterministic 5-fold assignment by case id.
inline int fold_of(const std::string& case_id, int folds = 5) {
    return static_cast<int>(detail::fnv1a(case_id) % static_cast<uint64_t>(folds));
}

// Checks that a checkpoint's architecture fields agree with the config
// before weights are copied.
inline void require_matching_architecture(const nlohmann::json& ckpt_config,
                                          const ModelConfig& cfg) {
    const auto want = cfg.to_json();
    const auto got = ModelConfig::from_json(ckpt_config).to_json();
    if (want != got)
        throw config_error("checkpoint architecture " + got.dump() +
                           " does not match configured " + want.dump());
}

// Supervised finetuning with generalized dice focal loss. The decoder is
// always freshly initialized; with a pretraining checkpoint, encoder weights
// are copied bit-exactly before the first step.
template <class T = float>
FinetuneRun<T> finetune(const std::vector<Volume>& train_vols,
                        const std::vector<Volume>& train_masks,
                        const std::vector<Volume>& val_vols,
                        const std::vector<Volume>& val_masks, const FinetuneConfig& cfg) {
    if (train_vols.empty() || train_vols.size() != train_masks.size())
        throw data_error("finetune: need matching train volumes and masks");
    if (val_vols.size() != val_masks.size())
        throw data_error("finetune: need matching val volumes and masks");
    for (size_t i = 0; i < train_vols.size(); ++i)
        if (train_masks[i].shape[1] != train_vols[i].shape[1] ||
            train_masks[i].shape[2] != train_vols[i].shape[2] ||
            train_masks[i].shape[3] != train_vols[i].shape[3])
            throw data_error("finetune: mask " + shape_str(train_masks[i].shape) +
                             " does not align with volume " + shape_str(train_vols[i].shape));

    FinetuneRun<T> run;
    run.model = std::make_unique<CSwinUNet<T>>(cfg.model, cfg.seed);
    if (cfg.init != "random") {
        Checkpoint ckpt = Checkpoint::load(cfg.init);
        require_matching_architecture(ckpt.meta.at("config"), cfg.model);
        ckpt.copy_prefix_to(run.model->store(), "enc.");
    }

    auto& store = run.model->store();
    AdamW<T> opt(store, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

    const int64_t n = static_cast<int64_t>(train_vols.size());
    const int64_t bs = std::max<int64_t>(1, std::min<int64_t>(cfg.batch, n));
    const int64_t steps_per_epoch = (n + bs - 1) / bs;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    int64_t step = 0;

    auto mask_tensor = [&](const std::vector<const Volume*>& masks) {
        auto t = volumes_to_batch<T>(masks);  // (B,1,H,W,D)
        return reshape(t, {t.dim(0), t.dim(2), t.dim(3), t.dim(4)});
    };

    Rng order_rng = Rng(cfg.seed).child("ft_order");
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        order_rng.shuffle(order);

        FinetuneEpoch rec;
        rec.epoch = epoch;
        int64_t batches = 0;
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            const int64_t lo = s * bs, hi = std::min(n, lo + bs);
            if (lo >= hi) break;
            std::vector<const Volume*> vols, masks;
            for (int64_t i = lo; i < hi; ++i) {
                vols.push_back(&train_vols[order[i]]);
                masks.push_back(&train_masks[order[i]]);
            }
            store.zero_grad();
            auto probs = run.model->forward(volumes_to_batch<T>(vols));
            auto loss = dice_focal_loss(probs, mask_tensor(masks), static_cast<T>(cfg.lambda),
                                        static_cast<T>(cfg.gamma));
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw numeric_error("finetune: loss diverged at epoch " + std::to_string(epoch) +
                                    " step " + std::to_string(step));
            loss.backward();
            opt.set_lr(warmup_cosine_lr(cfg.lr, step, total_steps,
                                        cfg.warmup_epochs * steps_per_epoch));
            opt.step();
            ++step;
            ++batches;
            rec.train_loss += lv;
        }
        rec.train_loss /= static_cast<double>(batches);
        rec.lr = opt.lr();

        if (!val_vols.empty()) {
            NoGradGuard ng;
            double vloss = 0, vdice = 0;
            for (size_t i = 0; i < val_vols.size(); ++i) {
                std::vector<const Volume*> v{&val_vols[i]}, m{&val_masks[i]};
                auto probs = run.model->forward(volumes_to_batch<T>(v));
                auto tgt = mask_tensor(m);
                vloss += static_cast<double>(dice_focal_loss(probs, tgt,
                                                             static_cast<T>(cfg.lambda),
                                                             static_cast<T>(cfg.gamma))
                                                 .item());
                vdice += soft_dice(probs, tgt);
            }
            rec.val_loss = vloss / static_cast<double>(val_vols.size());
            rec.val_dice = vdice / static_cast<double>(val_vols.size());
        }
        run.history.push_back(rec);
    }
    return run;
}

}  // namespace cswin
