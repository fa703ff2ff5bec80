#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "cswin/attention.hpp"
#include "cswin/finetune.hpp"
#include "cswin/gradcheck.hpp"
#include "cswin/ssl.hpp"
#include "cswin/unet.hpp"

namespace cswin {

// Finite-difference verification of every layer and loss on seeded small
// double-precision instances. Shared by the `gradcheck` CLI subcommand and
// the acceptance suite.

struct GradSuiteItem {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    int64_t params = 0;
    bool nonfinite = false;
    bool pass = false;
};

struct GradSuiteResult {
    std::vector<GradSuiteItem> items;
    bool all_pass = true;
    double seconds = 0.0;
};

namespace detail {

using D = double;

inline void randn_param(ParamStore<D>& ps, const std::string& name, Shape shape, Rng& rng,
                        double scale = 1.0) {
    auto t = ps.create(name, std::move(shape));
    for (auto& v : t.data()) v = rng.normal() * scale;
}

template <class Setup>
void run_check(GradSuiteResult& res, const std::string& name, double tol, uint64_t seed,
               Setup&& setup, GradCheckOptions opts = {}) {
    GradSuiteItem item;
    item.name = name;
    item.tol = tol;
    ParamStore<D> ps(seed);
    Rng rng(seed);
    std::function<Tensor<D>()> f = setup(ps, rng);
    auto rep = grad_check(ps, f, opts);
    item.max_rel_err = rep.max_rel_err;
    item.nonfinite = rep.nonfinite;
    item.params = static_cast<int64_t>(rep.params.size());
    item.pass = rep.pass(tol);
    res.all_pass = res.all_pass && item.pass;
    res.items.push_back(std::move(item));
}

}  // namespace detail

inline GradSuiteResult run_gradient_suite() {
    using detail::randn_param;
    using D = double;
    GradSuiteResult res;
    const auto t0 = std::chrono::steady_clock::now();

    // core ops on three distinct shapes each
    const Shape shapes3[3] = {{2, 3}, {4, 5}, {3, 7}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "matmul/" + shape_str(shapes3[s]), 1e-4, 100 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "a", shapes3[s], rng);
                              randn_param(ps, "b", {shapes3[s][1], 4}, rng);
                              return [&ps] {
                                  return mean(mul(matmul(ps.get("a"), ps.get("b")),
                                                  matmul(ps.get("a"), ps.get("b"))));
                              };
                          });
    }
    detail::run_check(res, "matmul/transposed", 1e-4, 110, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "a", {3, 5}, rng);
        randn_param(ps, "b", {3, 4}, rng);
        return [&ps] { return sum(matmul(ps.get("a"), ps.get("b"), true, false)); };
    });
    const Shape bmm_a[3] = {{3, 2, 4}, {1, 3, 3}, {4, 5, 2}};
    const Shape bmm_b[3] = {{3, 5, 4}, {1, 3, 2}, {4, 3, 2}};
    const bool bmm_tb[3] = {true, false, true};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "bmm/" + shape_str(bmm_a[s]), 1e-4, 111 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "a", bmm_a[s], rng);
                              randn_param(ps, "b", bmm_b[s], rng);
                              bool tb = bmm_tb[s];
                              return [&ps, tb] {
                                  auto y = bmm(ps.get("a"), ps.get("b"), false, tb);
                                  return mean(mul(y, y));
                              };
                          });
    }

    const Shape conv_in[3] = {{1, 2, 5, 5, 4}, {2, 1, 6, 4, 3}, {1, 3, 4, 4, 4}};
    const Dims3 conv_stride[3] = {{1, 1, 1}, {2, 2, 1}, {2, 1, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "conv3d/" + shape_str(conv_in[s]), 1e-4, 120 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "x", conv_in[s], rng);
                              randn_param(ps, "w", {2, conv_in[s][1], 3, 3, 2}, rng, 0.5);
                              randn_param(ps, "b", {2}, rng, 0.5);
                              Dims3 st = conv_stride[s];
                              return [&ps, st] {
                                  auto y = conv3d(ps.get("x"), ps.get("w"), ps.get("b"), st,
                                                  {1, 1, 1});
                                  return mean(mul(y, y));
                              };
                          });
    }
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "conv_transpose3d/" + std::to_string(s), 1e-4, 130 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "x", {1, 2, 3, 3, 2 + s}, rng);
                              randn_param(ps, "w", {2, 3, 2, 2, 2}, rng, 0.5);
                              randn_param(ps, "b", {3}, rng, 0.5);
                              Dims3 st{s == 0 ? 1 : 2, 2, 1};
                              return [&ps, st] {
                                  auto y = conv_transpose3d(ps.get("x"), ps.get("w"), ps.get("b"),
                                                            st, {0, 0, 0});
                                  return mean(mul(y, y));
                              };
                          });
    }

    const Shape in_shapes[3] = {{2, 3, 4, 3, 2}, {1, 2, 5, 2, 2}, {3, 4, 2, 2, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "instance_norm/" + shape_str(in_shapes[s]), 1e-4, 140 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              auto norm = std::make_shared<InstanceNorm3d<D>>(ps, "in",
                                                                              in_shapes[s][1]);
                              auto x = Tensor<D>::zeros(in_shapes[s]);
                              for (auto& v : x.data()) v = rng.normal();
                              ps.put("x", x.set_requires_grad(true));
                              return [&ps, norm] {
                                  auto y = norm->forward(ps.get("x"));
                                  return mean(mul(y, y));
                              };
                          });
    }
    const Shape ln_shapes[3] = {{2, 6, 2, 2, 3}, {1, 4, 3, 2, 2}, {2, 3, 2, 4, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "layer_norm/" + shape_str(ln_shapes[s]), 1e-4, 145 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              auto norm = std::make_shared<LayerNorm<D>>(ps, "ln",
                                                                         ln_shapes[s][1], 1);
                              auto x = Tensor<D>::zeros(ln_shapes[s]);
                              for (auto& v : x.data()) v = rng.normal();
                              ps.put("x", x.set_requires_grad(true));
                              return [&ps, norm] {
                                  auto y = norm->forward(ps.get("x"));
                                  return mean(mul(y, y));
                              };
                          });
    }

    const Shape sm_shapes[3] = {{5}, {3, 6}, {2, 3, 4}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "softmax/" + shape_str(sm_shapes[s]), 1e-4, 150 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "x", sm_shapes[s], rng);
                              size_t axis = sm_shapes[s].size() - 1;
                              return [&ps, axis] {
                                  auto y = softmax(ps.get("x"), axis);
                                  return sum(mul(y, y));
                              };
                          });
    }
    const Shape ce_shapes[3] = {{5, 4}, {3, 2}, {7, 6}};
    const std::vector<int64_t> ce_labels[3] = {{0, 3, 1, 2, 3}, {1, 0, 1}, {5, 0, 2, 4, 1, 3, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "cross_entropy/" + shape_str(ce_shapes[s]), 1e-4, 153 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "logits", ce_shapes[s], rng);
                              auto labels = ce_labels[s];
                              return [&ps, labels] {
                                  return cross_entropy(ps.get("logits"), labels);
                              };
                          });
    }

    const Shape ew_shapes[3] = {{7}, {2, 5}, {2, 2, 3}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "elementwise/" + shape_str(ew_shapes[s]), 1e-4, 160 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "a", ew_shapes[s], rng);
                              randn_param(ps, "b", ew_shapes[s], rng);
                              return [&ps] {
                                  auto a = ps.get("a");
                                  auto b = ps.get("b");
                                  auto pos = add_scalar(mul(a, a), D(0.5));  // strictly positive
                                  auto t = div(mul(sub(a, b), add(a, b)), pos);
                                  t = add(t, exp(mul_scalar(a, D(0.3))));
                                  t = add(t, log(pos));
                                  t = add(t, pow_scalar(pos, D(1.7)));
                                  return mean(t);
                              };
                          });
    }
    detail::run_check(res, "elementwise/broadcast", 1e-4, 163, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "a", {3, 1, 4}, rng);
        randn_param(ps, "b", {2, 1}, rng);
        return [&ps] { return mean(mul(add(ps.get("a"), ps.get("b")), ps.get("b"))); };
    });
    const Shape act_shapes[3] = {{4, 5}, {9}, {2, 3, 3}};
    for (int s = 0; s < 3; ++s)
    detail::run_check(res, "unary/activations/" + shape_str(act_shapes[s]), 1e-4, 164,
                      [&, s](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "x", act_shapes[s], rng);
        return [&ps] {
            auto x = ps.get("x");
            auto t = add(gelu(x), relu(add_scalar(x, D(0.1))));
            t = add(t, sigmoid(x));
            t = add(t, softplus(x));
            t = add(t, sqrt(add_scalar(mul(x, x), D(0.3))));
            t = add(t, abs(add_scalar(x, D(0.05))));
            t = add(t, clamp_min(x, D(-0.4)));
            return mean(t);
        };
    });

    const Shape shp_shapes[3] = {{2, 3, 4}, {3, 2, 2, 2}, {6, 4}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "shape_ops/" + shape_str(shp_shapes[s]), 1e-4, 170 + s,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "x", shp_shapes[s], rng);
                              return [&ps, s] {
                                  auto x = ps.get("x");
                                  Shape flat{x.numel()};
                                  auto t = reshape(x, flat);
                                  t = reshape(t, {2, x.numel() / 2});
                                  t = permute(t, {1, 0});
                                  t = pad(t, {{1, 0}, {0, 2}});
                                  t = slice(t, 1, 0, 2);
                                  auto c = concat<D>({t, mul_scalar(t, D(0.5))}, 0);
                                  (void)s;
                                  return mean(mul(c, c));
                              };
                          });
    }
    const Shape red_shapes[3] = {{3, 4, 2}, {5, 2}, {2, 2, 3, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "reduce/sum_axes/" + shape_str(red_shapes[s]), 1e-4, 173,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "x", red_shapes[s], rng);
                              return [&ps] {
                                  auto t = sum_axes(ps.get("x"), {1});
                                  auto m = mean_axes(ps.get("x"), {0});
                                  return add(mean(mul(t, t)), mean(mul(m, m)));
                              };
                          });
    }
    const Shape cos_shapes[3] = {{4, 6}, {2, 3}, {5, 2}};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "l2_normalize+cosine/" + shape_str(cos_shapes[s]), 1e-4, 174,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "a", cos_shapes[s], rng);
                              randn_param(ps, "b", cos_shapes[s], rng);
                              return [&ps] {
                                  auto c = cosine_similarity(ps.get("a"), ps.get("b"), 1);
                                  return mean(mul(c, c));
                              };
                          });
    }
    const int64_t bl_heads[3] = {2, 1, 3};
    const int64_t bl_tokens[3] = {4, 3, 5};
    for (int s = 0; s < 3; ++s) {
        detail::run_check(res, "bias_lookup/" + std::to_string(bl_tokens[s]), 1e-4, 175,
                          [&, s](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "table", {bl_heads[s], 9}, rng);
                              int64_t tk = bl_tokens[s];
                              return [&ps, tk] {
                                  std::vector<int64_t> idx;
                                  for (int64_t i = 0; i < tk * tk; ++i) idx.push_back((i * 5) % 9);
                                  auto b = bias_lookup(ps.get("table"), idx, tk);
                                  return mean(mul(b, b));
                              };
                          });
    }

    // Eq. 6 scaled cosine attention, both similarity modes
    for (bool cosine : {true, false}) {
        detail::run_check(res, std::string("scaled_cosine_attention/") +
                                   (cosine ? "cosine" : "dot"),
                          1e-4, 180 + (cosine ? 0 : 1), [cosine](ParamStore<D>& ps, Rng& rng) {
                              randn_param(ps, "q", {5, 3}, rng);
                              randn_param(ps, "k", {5, 3}, rng);
                              randn_param(ps, "v", {5, 3}, rng);
                              randn_param(ps, "bias", {5, 5}, rng, 0.3);
                              auto tau = ps.create("tau", {});
                              tau.data()[0] = 0.7;
                              return [&ps, cosine] {
                                  auto y = scaled_cosine_attention(
                                      ps.get("q"), ps.get("k"), ps.get("v"), ps.get("tau"),
                                      ps.get("bias"), cosine);
                                  return mean(mul(y, y));
                              };
                          });
    }

    // CSwin block on a 2x(4,4,4)-token instance, stripe width padding engaged
    detail::run_check(res, "cswin_block", 1e-4, 190, [](ParamStore<D>& ps, Rng& rng) {
        CSwinBlockConfig bc;
        bc.channels = 6;
        bc.heads = 3;
        bc.sw = 3;  // 4 % 3 != 0 exercises the key mask
        bc.grid = {4, 4, 4};
        bc.use_cosine = true;
        bc.mlp_ratio = 1;
        auto blk = std::make_shared<CSwinBlock<D>>(ps, "blk", bc, Rng(77));
        auto x = Tensor<D>::zeros({2, 6, 4, 4, 4});
        for (auto& v : x.data()) v = rng.normal();
        return [&ps, blk, x] {
            auto y = blk->forward(x);
            return mean(mul(y, y));
        };
    });

    // pretext losses
    detail::run_check(res, "loss/contrastive", 1e-4, 200, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "emb", {6, 8}, rng);
        return [&ps] {
            auto e = l2_normalize(ps.get("emb"), 1);
            return contrastive_loss(e, D(0.5));
        };
    });
    detail::run_check(res, "loss/restoration", 1e-4, 201, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "recon", {1, 2, 3, 4, 3}, rng);
        auto target = Tensor<D>::zeros({1, 2, 3, 4, 3});
        for (auto& v : target.data()) v = rng.normal();
        return [&ps, target] { return restoration_loss(ps.get("recon"), target); };
    });
    detail::run_check(res, "loss/rotation", 1e-4, 202, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "logits", {6, 4}, rng);
        return [&ps] { return rotation_loss(ps.get("logits"), {0, 1, 2, 3, 2, 1}); };
    });
    detail::run_check(res, "loss/awl", 1e-6, 203, [](ParamStore<D>& ps, Rng& rng) {
        auto c = ps.create("c", {3});
        c.data() = {0.8, 1.1, 1.4};
        (void)rng;
        return [&ps] {
            auto l1 = Tensor<D>::scalar(0.9);
            auto l2 = Tensor<D>::scalar(1.7);
            auto l3 = Tensor<D>::scalar(0.4);
            return awl_combine(l1, l2, l3, ps.get("c"));
        };
    });
    detail::run_check(res, "loss/awl_softplus", 1e-4, 204, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "raw", {3}, rng, 0.5);
        return [&ps] {
            auto c = add_scalar(softplus(ps.get("raw")), D(0.05));
            auto l1 = Tensor<D>::scalar(0.9);
            auto l2 = Tensor<D>::scalar(1.7);
            auto l3 = Tensor<D>::scalar(0.4);
            return awl_combine(l1, l2, l3, c);
        };
    });
    detail::run_check(res, "loss/dice_focal", 1e-4, 205, [](ParamStore<D>& ps, Rng& rng) {
        randn_param(ps, "logits", {1, 2, 3, 4, 2}, rng);
        auto target = Tensor<D>::zeros({1, 3, 4, 2});
        for (auto& v : target.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        return [&ps, target] {
            auto probs = softmax(ps.get("logits"), 1);
            return dice_focal_loss(probs, target, D(0.5), D(2.0));
        };
    });

    // encoder-decoder end to end with the finetuning loss
    detail::run_check(
        res, "encoder_decoder/end_to_end", 1e-4, 210,
        [](ParamStore<D>& ps, Rng& rng) {
            ModelConfig mc;
            mc.input_shape = {3, 16, 16, 8};
            mc.base_dim = 3;
            mc.depths = {1, 1, 1, 1};
            mc.heads = {3, 3, 3, 3};
            mc.sw = {1, 2, 2, 2};
            mc.mlp_ratio = 1;
            mc.strides = {{{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 1}, {1, 1, 1}}};
            auto net = std::make_shared<CSwinUNet<D>>(mc, 4242);
            // adopt the model parameters into the checked store
            auto& ms = net->store();
            for (size_t i = 0; i < ms.size(); ++i) ps.put(ms.names()[i], ms.at(i));
            auto x = Tensor<D>::zeros({1, 3, 16, 16, 8});
            for (auto& v : x.data()) v = rng.normal();
            auto target = Tensor<D>::zeros({1, 16, 16, 8});
            for (auto& v : target.data()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
            return [net, x, target] {
                auto probs = net->forward(x);
                return dice_focal_loss(probs, target, D(0.5), D(2.0));
            };
        },
        GradCheckOptions{1e-5, 32, 0x77});

    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace cswin
