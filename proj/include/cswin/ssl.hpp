#pragma once

#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "cswin/augment.hpp"
#include "cswin/optim.hpp"
#include "cswin/unet.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// ---- pretext losses -----------------------------------------------------------

// NT-Xent. Embeddings are (2N, E), already L2-normalized, with positive
// pairs at rows (2i, 2i+1). Mean over anchors of
//   -log exp(sim(v_i, v_pos)/t) / sum_{k != i} exp(sim(v_i, v_k)/t).
template <class T>
Tensor<T> contrastive_loss(const Tensor<T>& embeddings, T temperature) {
    if (embeddings.rank() != 2)
        throw shape_error("contrastive_loss: expected (2N,E), got " + shape_str(embeddings.shape()));
    const int64_t rows = embeddings.dim(0);
    if (rows < 4 || rows % 2 != 0)
        throw data_error("contrastive_loss: needs N >= 2 pairs, got " + std::to_string(rows) +
                         " embeddings");
    if (!(temperature > T(0))) throw value_error("contrastive_loss: temperature must be positive");

    auto logits = mul_scalar(matmul(embeddings, embeddings, false, true), T(1) / temperature);
    // self-similarity never acts as a negative
    std::vector<T> m(static_cast<size_t>(rows * rows), T(0));
    for (int64_t i = 0; i < rows; ++i) m[i * rows + i] = T(-1e9);
    logits = add(logits, Tensor<T>::from_data({rows, rows}, std::move(m)));

    std::vector<int64_t> labels(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) labels[i] = i ^ 1;
    return cross_entropy(logits, labels);
}

// L1 context-restoration loss, averaged over voxels.
template <class T>
Tensor<T> restoration_loss(const Tensor<T>& reconstruction, const Tensor<T>& original) {
    if (reconstruction.shape() != original.shape())
        throw shape_error("restoration_loss: shapes " + shape_str(reconstruction.shape()) +
                          " and " + shape_str(original.shape()) + " differ");
    return mean(abs(sub(reconstruction, original)));
}

// Mean cross-entropy over 4-way rotation logits.
template <class T>
Tensor<T> rotation_loss(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2 || logits.dim(1) != 4)
        throw shape_error("rotation_loss: expected (N,4) logits, got " + shape_str(logits.shape()));
    return cross_entropy(logits, labels);
}

// ---- automatic weighted loss -----------------------------------------------------

// Learnable positive task coefficients c_t = softplus(raw) + eps; the floor
// keeps every effective weight 1/(2 c_t^2) below 1/(2 eps^2).
template <class T>
struct AwlCoefficients {
    Tensor<T> raw;  // (3,)
    T eps = T(0.05);

    AwlCoefficients() = default;
    AwlCoefficients(ParamStore<T>& ps, const std::string& prefix) {
        raw = ps.create(prefix + ".c_raw", {3});
        // start at c = 1
        const double r0 = std::log(std::exp(1.0 - static_cast<double>(eps)) - 1.0);
        fill_constant(raw, static_cast<T>(r0));
    }

    Tensor<T> values() const { return add_scalar(softplus(raw), eps); }

    std::array<double, 3> effective_weights() const {
        std::array<double, 3> w;
        for (int i = 0; i < 3; ++i) {
            const double c =
                std::log1p(std::exp(static_cast<double>(raw.data()[i]))) + static_cast<double>(eps);
            w[i] = 1.0 / (2.0 * c * c);
        }
        return w;
    }
};

// L_task = l_cl/(2c1^2) + l_cr/(2c2^2) + l_rot/(2c3^2)
//        + ln (1+c1^2)(1+c2^2)(1+c3^2).
template <class T>
Tensor<T> awl_combine(const Tensor<T>& l_cl, const Tensor<T>& l_cr, const Tensor<T>& l_rot,
                      const Tensor<T>& c) {
    if (c.rank() != 1 || c.dim(0) != 3)
        throw shape_error("awl_combine: coefficients must be (3,), got " + shape_str(c.shape()));
    const Tensor<T>* ls[3] = {&l_cl, &l_cr, &l_rot};
    for (const Tensor<T>* l : ls) {
        if (l->numel() != 1)
            throw shape_error("awl_combine: losses must be scalars, got " + shape_str(l->shape()));
        const T v = l->data()[0];
        if (!std::isfinite(static_cast<double>(v)) || v < T(0))
            throw value_error("awl_combine: losses must be finite and non-negative");
    }
    auto c2 = mul(c, c);
    auto w = div(Tensor<T>::full({3}, T(1)), mul_scalar(c2, T(2)));  // 1/(2c^2)
    auto pick = [&](int i) { return reshape(slice(w, 0, i, 1), Shape{}); };
    auto weighted = add(add(mul(pick(0), l_cl), mul(pick(1), l_cr)), mul(pick(2), l_rot));
    auto reg = sum(log(add_scalar(c2, T(1))));  // == ln of the product
    return add(weighted, reg);
}

// Equal-weight arm (coefficients frozen at 1): 0.5 * (l_cl + l_cr + l_rot).
// Differs from awl_combine at c = 1 by the constant ln 8.
template <class T>
Tensor<T> equal_weight_combine(const Tensor<T>& l_cl, const Tensor<T>& l_cr,
                               const Tensor<T>& l_rot) {
    return mul_scalar(add(add(l_cl, l_cr), l_rot), T(0.5));
}

// ---- pretext heads ----------------------------------------------------------------

// Heads attach to the encoder bottleneck only and are dropped at finetuning:
// a pooled linear contrastive projection, a transposed-convolution
// reconstruction ladder back to input resolution, and a 4-way rotation
// classifier.
template <class T>
struct SslHeads {
    Linear<T> contrastive;
    Linear<T> rotation;
    std::vector<ConvTranspose3d<T>> rest_up;
    Conv3d<T> rest_out;
    AwlCoefficients<T> awl;
    int64_t embed_dim = 384;

    SslHeads() = default;
    SslHeads(ParamStore<T>& ps, const ModelConfig& cfg, int64_t embed_dim_, Rng rng)
        : embed_dim(embed_dim_) {
        const int64_t bottleneck = 8 * cfg.base_dim;
        contrastive = Linear<T>(ps, "ssl.contrastive", bottleneck, embed_dim, rng.child("cl"));
        rotation = Linear<T>(ps, "ssl.rotation", bottleneck, 4, rng.child("rot"));
        int64_t ci = bottleneck;
        for (int i = 0; i < 5; ++i) {
            Dims3 s = cfg.strides[4 - i];
            const int64_t co = std::max<int64_t>(8, ci / 2);
            rest_up.push_back(ConvTranspose3d<T>(ps, "ssl.restore.up" + std::to_string(i), ci, co,
                                                 s, s, {0, 0, 0},
                                                 rng.child("restore", static_cast<uint64_t>(i))));
            ci = co;
        }
        rest_out = Conv3d<T>(ps, "ssl.restore.out", ci, cfg.input_shape[0], {1, 1, 1}, {1, 1, 1},
                             {0, 0, 0}, rng.child("restore_out"));
        awl = AwlCoefficients<T>(ps, "ssl.awl");
    }

    // L2-normalized contrastive embeddings from pooled bottleneck features.
    Tensor<T> embed(const Tensor<T>& bottleneck) const {
        return l2_normalize(contrastive.forward(global_avg_pool(bottleneck)), 1);
    }

    Tensor<T> rotation_logits(const Tensor<T>& bottleneck) const {
        return rotation.forward(global_avg_pool(bottleneck));
    }

    Tensor<T> reconstruct(const Tensor<T>& bottleneck) const {
        auto h = bottleneck;
        for (const auto& up : rest_up) h = relu(up.forward(h));
        return rest_out.forward(h);
    }
};

// ---- pretraining loop ---------------------------------------------------------------

struct PretrainConfig {
    ModelConfig model;
    AugmentConfig augment;
    int64_t epochs = 300;
    int64_t batch_pairs = 8;  // volumes per step; each contributes two views
    double lr = 1e-3;
    int64_t warmup_epochs = 20;
    double temperature = 0.5;
    bool use_awl = true;
    int64_t embed_dim = 384;
    double weight_decay = 0.01;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"model", model.to_json()},
                {"augment", augment.to_json()},
                {"epochs", epochs},
                {"batch_pairs", batch_pairs},
                {"lr", lr},
                {"warmup_epochs", warmup_epochs},
                {"temperature", temperature},
                {"use_awl", use_awl},
                {"embed_dim", embed_dim},
                {"weight_decay", weight_decay},
                {"seed", seed}};
    }
    static PretrainConfig from_json(const nlohmann::json& j) {
        PretrainConfig c;
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("augment")) c.augment = AugmentConfig::from_json(j.at("augment"));
        if (j.contains("epochs")) c.epochs = j.at("epochs");
        if (j.contains("batch_pairs")) c.batch_pairs = j.at("batch_pairs");
        if (j.contains("lr")) c.lr = j.at("lr");
        if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs");
        if (j.contains("temperature")) c.temperature = j.at("temperature");
        if (j.contains("use_awl")) c.use_awl = j.at("use_awl");
        if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim");
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay");
        if (j.contains("seed")) c.seed = j.at("seed");
        return c;
    }
};

struct PretrainEpoch {
    int64_t epoch = 0;
    double l_cl = 0, l_cr = 0, l_rot = 0, l_task = 0;
    double w_cl = 0, w_cr = 0, w_rot = 0;  // effective weights 1/(2c^2)
    double lr = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},   {"l_cl", l_cl}, {"l_cr", l_cr}, {"l_rot", l_rot},
                {"l_task", l_task}, {"w_cl", w_cl}, {"w_cr", w_cr}, {"w_rot", w_rot},
                {"lr", lr}};
    }
};

template <class T>
struct PretrainRun {
    std::unique_ptr<CSwinUNet<T>> encoder;  // encoder-only model
    std::unique_ptr<SslHeads<T>> heads;
    std::vector<PretrainEpoch> history;
};

namespace detail {

// Assembles one step's views: adjacent rows are the two views of one volume.
template <class T>
struct SslBatch {
    Tensor<T> inputs, originals;
    std::vector<int64_t> rot_labels;
};

template <class T>
SslBatch<T> make_ssl_batch(const std::vector<const Volume*>& vols, const AugmentConfig& acfg,
                           Rng& rng) {
    std::vector<Volume> ins, origs;
    SslBatch<T> b;
    for (const Volume* v : vols) {
        AugmentedPair p = augment(*v, acfg, rng.next_u64());
        ins.push_back(std::move(p.a.input));
        origs.push_back(std::move(p.a.original));
        b.rot_labels.push_back(p.a.rot_label);
        ins.push_back(std::move(p.b.input));
        origs.push_back(std::move(p.b.original));
        b.rot_labels.push_back(p.b.rot_label);
    }
    std::vector<const Volume*> ip, op;
    for (const auto& v : ins) ip.push_back(&v);
    for (const auto& v : origs) op.push_back(&v);
    b.inputs = volumes_to_batch<T>(ip);
    b.originals = volumes_to_batch<T>(op);
    return b;
}

}  // namespace detail

// Multi-task self-supervised pretraining. Aborts with the offending step in
// the message if the loss leaves the finite range.
template <class T = float>
PretrainRun<T> pretrain(const std::vector<Volume>& corpus, const PretrainConfig& cfg) {
    if (corpus.empty()) throw data_error("pretrain: empty corpus");
    if (cfg.batch_pairs < 2)
        throw config_error("pretrain: batch_pairs must be >= 2 for contrastive negatives");

    PretrainRun<T> run;
    run.encoder = std::make_unique<CSwinUNet<T>>(cfg.model, cfg.seed, /*encoder_only=*/true);
    Rng hrng = Rng(cfg.seed).child("ssl_heads");
    run.heads = std::make_unique<SslHeads<T>>(run.encoder->store(), cfg.model, cfg.embed_dim, hrng);

    auto& store = run.encoder->store();
    AdamW<T> opt(store, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

    const int64_t n = static_cast<int64_t>(corpus.size());
    const int64_t steps_per_epoch = std::max<int64_t>(1, n / cfg.batch_pairs);
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    int64_t step = 0;

    Rng order_rng = Rng(cfg.seed).child("order");
    Rng aug_rng = Rng(cfg.seed).child("augment");

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        order_rng.shuffle(order);

        PretrainEpoch rec;
        rec.epoch = epoch;
        int64_t batches = 0;
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            int64_t lo = s * cfg.batch_pairs;
            int64_t hi = (s + 1 == steps_per_epoch) ? n : lo + cfg.batch_pairs;
            std::vector<const Volume*> vols;
            for (int64_t i = lo; i < hi; ++i) vols.push_back(&corpus[order[i]]);

            auto batch = detail::make_ssl_batch<T>(vols, cfg.augment, aug_rng);
            store.zero_grad();
            auto enc = run.encoder->encode(batch.inputs);
            auto l_cl =
                contrastive_loss(run.heads->embed(enc.bottleneck), static_cast<T>(cfg.temperature));
            auto l_cr = restoration_loss(run.heads->reconstruct(enc.bottleneck), batch.originals);
            auto l_rot = rotation_loss(run.heads->rotation_logits(enc.bottleneck), batch.rot_labels);
            Tensor<T> l_task = cfg.use_awl
                                   ? awl_combine(l_cl, l_cr, l_rot, run.heads->awl.values())
                                   : equal_weight_combine(l_cl, l_cr, l_rot);
            const double lt = static_cast<double>(l_task.item());
            if (!std::isfinite(lt))
                throw numeric_error("pretrain: loss diverged at epoch " + std::to_string(epoch) +
                                    " step " + std::to_string(step));
            l_task.backward();
            opt.set_lr(warmup_cosine_lr(cfg.lr, step, total_steps,
                                        cfg.warmup_epochs * steps_per_epoch));
            opt.step();
            ++step;
            ++batches;
            rec.l_cl += static_cast<double>(l_cl.item());
            rec.l_cr += static_cast<double>(l_cr.item());
            rec.l_rot += static_cast<double>(l_rot.item());
            rec.l_task += lt;
        }
        rec.l_cl /= batches;
        rec.l_cr /= batches;
        rec.l_rot /= batches;
        rec.l_task /= batches;
        if (cfg.use_awl) {
            auto w = run.heads->awl.effective_weights();
            rec.w_cl = w[0];
            rec.w_cr = w[1];
            rec.w_rot = w[2];
        } else {
            rec.w_cl = rec.w_cr = rec.w_rot = 0.5;
        }
        rec.lr = opt.lr();
        run.history.push_back(rec);
    }
    return run;
}

// Fraction of correctly classified rotations over freshly augmented views of
// `vols`; evaluation stream is independent of the training stream.
template <class T>
double rotation_accuracy(const CSwinUNet<T>& encoder, const SslHeads<T>& heads,
                         const std::vector<Volume>& vols, const AugmentConfig& acfg,
                         uint64_t seed) {
    if (vols.empty()) throw data_error("rotation_accuracy: no volumes");
    NoGradGuard ng;
    Rng rng = Rng(seed).child("rot_eval");
    int64_t hits = 0, total = 0;
    for (const auto& v : vols) {
        AugmentedPair p = augment(v, acfg, rng.next_u64());
        for (const AugmentedView* view : {&p.a, &p.b}) {
            std::vector<const Volume*> one{&view->input};
            auto enc = encoder.encode(volumes_to_batch<T>(one));
            auto logits = heads.rotation_logits(enc.bottleneck);
            const auto& d = logits.data();
            int best = 0;
            for (int k = 1; k < 4; ++k)
                if (d[k] > d[best]) best = k;
            hits += (best == view->rot_label) ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace cswin
