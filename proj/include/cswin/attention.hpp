#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cswin/nn.hpp"
#include "cswin/ops.hpp"
#include "cswin/params.hpp"

namespace cswin {

// Axis a stripe partition runs along. Horizontal stripes are slabs of `sw`
// planes across the H axis, vertical across W, longitudinal across D.
enum class StripeAxis : int { Horizontal = 0, Vertical = 1, Longitudinal = 2 };

struct StripeConfig {
    int64_t sw = 1;
    StripeAxis axis = StripeAxis::Horizontal;
    Dims3 grid{0, 0, 0};  // (H', W', D') of the token grid
};

// Everything needed to invert a partition exactly, padding included.
struct PadRecord {
    StripeAxis axis;
    int64_t sw = 0;
    Dims3 grid{0, 0, 0};    // original extents
    int64_t padded = 0;     // striped-axis extent after zero padding
    int64_t windows = 0;    // M = padded / sw
    int64_t batch = 1;      // leading batch size folded into the window axis
};

namespace detail {

inline size_t axis_i(StripeAxis a) { return static_cast<size_t>(static_cast<int>(a)); }

// Window extents: the grid with the striped axis replaced by sw.
inline Dims3 window_extents(const Dims3& grid, StripeAxis axis, int64_t sw) {
    Dims3 w = grid;
    w[axis_i(axis)] = sw;
    return w;
}

inline std::vector<size_t> stripe_permutation(StripeAxis axis) {
    switch (axis) {
        case StripeAxis::Horizontal: return {0, 2, 3, 4, 5, 1};
        case StripeAxis::Vertical: return {0, 3, 2, 4, 5, 1};
        default: return {0, 4, 2, 3, 5, 1};
    }
}

inline std::vector<size_t> invert_permutation(const std::vector<size_t>& p) {
    std::vector<size_t> inv(p.size());
    for (size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
    return inv;
}

}  // namespace detail

// Folds a batched token grid (N,F,H,W,D) into window-major stripe batches
// (N*M, tokens_per_window, F). The striped axis is zero padded up to a
// multiple of sw; the record allows bit-exact inversion.
template <class T>
std::pair<Tensor<T>, PadRecord> partition_stripes_batched(const Tensor<T>& x, StripeAxis axis,
                                                          int64_t sw) {
    if (sw <= 0) throw value_error("partition_stripes: stripe width must be positive, got " +
                                   std::to_string(sw));
    if (x.rank() != 5)
        throw shape_error("partition_stripes: expected (N,F,H,W,D), got " + shape_str(x.shape()));
    Dims3 grid{x.dim(2), x.dim(3), x.dim(4)};
    for (int64_t e : grid)
        if (e <= 0) throw value_error("partition_stripes: grid extents must be positive");

    const size_t ai = detail::axis_i(axis);
    const int64_t extent = grid[ai];
    const int64_t windows = (extent + sw - 1) / sw;
    const int64_t padded = windows * sw;

    Tensor<T> t = x;
    if (padded != extent) {
        std::vector<std::pair<int64_t, int64_t>> pads(5, {0, 0});
        pads[2 + ai] = {0, padded - extent};
        t = pad(t, pads);
    }
    const int64_t n = x.dim(0), f = x.dim(1);
    Dims3 e = grid;
    e[ai] = padded;

    Shape split;
    switch (axis) {
        case StripeAxis::Horizontal: split = {n, f, windows, sw, e[1], e[2]}; break;
        case StripeAxis::Vertical: split = {n, f, e[0], windows, sw, e[2]}; break;
        default: split = {n, f, e[0], e[1], windows, sw}; break;
    }
    t = reshape(t, split);
    t = permute(t, detail::stripe_permutation(axis));
    Dims3 w = detail::window_extents(grid, axis, sw);
    t = reshape(t, {n * windows, w[0] * w[1] * w[2], f});

    PadRecord rec{axis, sw, grid, padded, windows, n};
    return {t, rec};
}

// Exact inverse of partition_stripes_batched.
template <class T>
Tensor<T> merge_stripes_batched(const Tensor<T>& stripes, const PadRecord& rec) {
    if (stripes.rank() != 3)
        throw shape_error("merge_stripes: expected (B,T,F), got " + shape_str(stripes.shape()));
    Dims3 w = detail::window_extents(rec.grid, rec.axis, rec.sw);
    const int64_t tokens = w[0] * w[1] * w[2];
    if (stripes.dim(0) != rec.batch * rec.windows || stripes.dim(1) != tokens)
        throw shape_error("merge_stripes: stripe tensor " + shape_str(stripes.shape()) +
                          " inconsistent with pad record");
    const int64_t n = rec.batch, f = stripes.dim(2);
    Tensor<T> t = reshape(stripes, {n, rec.windows, w[0], w[1], w[2], f});
    t = permute(t, detail::invert_permutation(detail::stripe_permutation(rec.axis)));
    const size_t ai = detail::axis_i(rec.axis);
    Dims3 e = rec.grid;
    e[ai] = rec.padded;
    t = reshape(t, {n, f, e[0], e[1], e[2]});
    if (rec.padded != rec.grid[ai]) t = slice(t, 2 + ai, 0, rec.grid[ai]);
    return t;
}

// Single-grid partition per the stripe definition: (F,H,W,D) -> M blocks of
// window shape with the feature axis last, e.g. horizontal blocks are
// (sw, W', D', F).
template <class T>
struct Partition {
    std::vector<Tensor<T>> blocks;
    PadRecord record;
};

template <class T>
Partition<T> partition_stripes(const Tensor<T>& grid, const StripeConfig& cfg) {
    if (grid.rank() != 4)
        throw shape_error("partition_stripes: expected (F,H,W,D), got " + shape_str(grid.shape()));
    auto x = reshape(grid, {1, grid.dim(0), grid.dim(1), grid.dim(2), grid.dim(3)});
    auto [stripes, rec] = partition_stripes_batched(x, cfg.axis, cfg.sw);
    Dims3 w = detail::window_extents(rec.grid, cfg.axis, cfg.sw);
    Partition<T> out;
    out.record = rec;
    for (int64_t m = 0; m < rec.windows; ++m)
        out.blocks.push_back(reshape(slice(stripes, 0, m, 1), {w[0], w[1], w[2], grid.dim(0)}));
    return out;
}

template <class T>
Tensor<T> merge_stripes(const std::vector<Tensor<T>>& blocks, const PadRecord& rec) {
    if (blocks.empty()) throw value_error("merge_stripes: no blocks");
    if (static_cast<int64_t>(blocks.size()) != rec.windows)
        throw shape_error("merge_stripes: got " + std::to_string(blocks.size()) +
                          " blocks, pad record expects " + std::to_string(rec.windows));
    const Shape& s0 = blocks[0].shape();
    Dims3 w = detail::window_extents(rec.grid, rec.axis, rec.sw);
    if (s0.size() != 4 || s0[0] != w[0] || s0[1] != w[1] || s0[2] != w[2])
        throw shape_error("merge_stripes: block shape " + shape_str(s0) +
                          " inconsistent with pad record");
    std::vector<Tensor<T>> flat;
    for (const auto& b : blocks) {
        if (b.shape() != s0)
            throw shape_error("merge_stripes: inconsistent block shapes " + shape_str(s0) +
                              " vs " + shape_str(b.shape()));
        flat.push_back(reshape(b, {1, w[0] * w[1] * w[2], s0[3]}));
    }
    auto stripes = concat(flat, 0);
    auto merged = merge_stripes_batched(stripes, rec);  // (1,F,H,W,D)
    return reshape(merged, {s0[3], rec.grid[0], rec.grid[1], rec.grid[2]});
}

// Attention logits for one window, Eq. of the scaled cosine form:
//   cosine:      cos(q_i, k_j) / tau + B_ij
//   dot-product: (q_i . k_j) / sqrt(d_k) + B_ij
// q,k,v are (tokens, d_k); tau a positive scalar tensor; bias (tokens,tokens)
// or undefined. Zero-norm vectors yield cosine 0 against everything.
template <class T>
Tensor<T> scaled_cosine_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  const Tensor<T>& tau, const Tensor<T>& bias, bool use_cosine,
                                  T tau_min = T(0.01)) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw shape_error("scaled_cosine_attention: q,k,v must be rank-2, got " +
                          shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                          shape_str(v.shape()));
    if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0))
        throw shape_error("scaled_cosine_attention: mismatched shapes " + shape_str(q.shape()) +
                          ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
    Tensor<T> logits;
    if (use_cosine) {
        for (T t : tau.data())
            if (t < tau_min)
                throw value_error("scaled_cosine_attention: tau below tau_min");
        auto qn = l2_normalize(q, 1);
        auto kn = l2_normalize(k, 1);
        logits = div(matmul(qn, kn, false, true), tau);
    } else {
        logits = mul_scalar(matmul(q, k, false, true),
                            T(1) / std::sqrt(static_cast<T>(q.dim(1))));
    }
    if (bias.defined()) logits = add(logits, bias);
    auto w = softmax(logits, 1);
    return matmul(w, v);
}

struct CSwinBlockConfig {
    int64_t channels = 0;   // C
    int64_t heads = 0;      // G, divisible by 3; d_k = C / G
    int64_t sw = 1;
    Dims3 grid{0, 0, 0};    // token grid extents this block is built for
    bool use_cosine = true;
    int64_t mlp_ratio = 4;
    double tau_min = 0.01;
};

// One axis-aligned attention group: G/3 heads, packed projections, a
// learnable temperature per head and a relative-position bias table over
// within-window offsets.
template <class T>
struct AttentionHeadGroup {
    Tensor<T> wq, bq, wk, bk, wv, bv;
    Tensor<T> tau_raw;      // tau = max(exp(tau_raw), tau_min) per head
    Tensor<T> bias_table;   // (heads, (2w0-1)(2w1-1)(2w2-1))
    Tensor<T> key_mask;     // (M,1,1,T): 0 valid, -1e9 padded; undefined when no padding
    std::vector<int64_t> bias_idx;
    StripeAxis axis = StripeAxis::Horizontal;
    Dims3 wext{0, 0, 0};
    int64_t tokens = 0;
    int64_t windows = 0;

    AttentionHeadGroup() = default;

    AttentionHeadGroup(ParamStore<T>& ps, const std::string& prefix, const CSwinBlockConfig& cfg,
                       StripeAxis axis_, Rng rng)
        : axis(axis_) {
        const int64_t c = cfg.channels, g3 = cfg.heads / 3, c3 = c / 3;
        wq = ps.create(prefix + ".wq", {c, c3});
        bq = ps.create(prefix + ".bq", {c3});
        wk = ps.create(prefix + ".wk", {c, c3});
        bk = ps.create(prefix + ".bk", {c3});
        wv = ps.create(prefix + ".wv", {c, c3});
        bv = ps.create(prefix + ".bv", {c3});
        fill_trunc_normal(wq, rng, 0.02);
        fill_trunc_normal(wk, rng, 0.02);
        fill_trunc_normal(wv, rng, 0.02);
        tau_raw = ps.create(prefix + ".tau", {g3});  // tau starts at exp(0) = 1

        wext = detail::window_extents(cfg.grid, axis, cfg.sw);
        tokens = wext[0] * wext[1] * wext[2];
        const int64_t table = (2 * wext[0] - 1) * (2 * wext[1] - 1) * (2 * wext[2] - 1);
        bias_table = ps.create(prefix + ".bias", {g3, table});
        Rng brng = rng.child("bias");
        fill_trunc_normal(bias_table, brng, 0.02);
        build_index_and_mask(cfg);
    }

    void build_index_and_mask(const CSwinBlockConfig& cfg) {
        const size_t ai = detail::axis_i(axis);
        const int64_t extent = cfg.grid[ai];
        windows = (extent + cfg.sw - 1) / cfg.sw;

        bias_idx.resize(static_cast<size_t>(tokens * tokens));
        auto coord = [&](int64_t t, Dims3& c) {
            c[2] = t % wext[2];
            c[1] = (t / wext[2]) % wext[1];
            c[0] = t / (wext[1] * wext[2]);
        };
        for (int64_t i = 0; i < tokens; ++i) {
            Dims3 ci, cj;
            coord(i, ci);
            for (int64_t j = 0; j < tokens; ++j) {
                coord(j, cj);
                int64_t d0 = ci[0] - cj[0] + wext[0] - 1;
                int64_t d1 = ci[1] - cj[1] + wext[1] - 1;
                int64_t d2 = ci[2] - cj[2] + wext[2] - 1;
                bias_idx[i * tokens + j] = (d0 * (2 * wext[1] - 1) + d1) * (2 * wext[2] - 1) + d2;
            }
        }

        if (windows * cfg.sw != extent) {
            std::vector<T> m(static_cast<size_t>(windows * tokens), T(0));
            for (int64_t w = 0; w < windows; ++w)
                for (int64_t t = 0; t < tokens; ++t) {
                    int64_t along = (t / axis_stride(ai)) % wext[ai];
                    if (w * cfg.sw + along >= extent) m[w * tokens + t] = T(-1e9);
                }
            key_mask = Tensor<T>::from_data({windows, 1, 1, tokens}, std::move(m));
        }
    }

    int64_t axis_stride(size_t ai) const {
        if (ai == 0) return wext[1] * wext[2];
        if (ai == 1) return wext[2];
        return 1;
    }
};

// 3D cross-shaped window attention block: pre-norm residual wiring around
// grouped stripe attention and a token MLP.
template <class T>
struct CSwinBlock {
    CSwinBlockConfig cfg;
    std::array<AttentionHeadGroup<T>, 3> groups;
    Linear<T> wo;
    LayerNorm<T> norm1, norm2;
    TokenMlp<T> mlp;

    CSwinBlock() = default;

    CSwinBlock(ParamStore<T>& ps, const std::string& prefix, const CSwinBlockConfig& cfg_, Rng rng)
        : cfg(cfg_) {
        if (cfg.heads <= 0 || cfg.heads % 3 != 0)
            throw config_error("CSwinBlock: head count " + std::to_string(cfg.heads) +
                               " must be a positive multiple of 3");
        if (cfg.channels % cfg.heads != 0)
            throw config_error("CSwinBlock: channels " + std::to_string(cfg.channels) +
                               " not divisible by heads " + std::to_string(cfg.heads));
        if (cfg.channels % 3 != 0)
            throw config_error("CSwinBlock: channels " + std::to_string(cfg.channels) +
                               " not divisible by 3");
        norm1 = LayerNorm<T>(ps, prefix + ".ln1", cfg.channels, 1);
        static const char* names[3] = {".h", ".v", ".l"};
        for (int a = 0; a < 3; ++a)
            groups[a] = AttentionHeadGroup<T>(ps, prefix + names[a], cfg,
                                              static_cast<StripeAxis>(a), rng.child(names[a]));
        wo = Linear<T>(ps, prefix + ".wo", cfg.channels, cfg.channels, rng.child("wo"));
        norm2 = LayerNorm<T>(ps, prefix + ".ln2", cfg.channels, 1);
        mlp = TokenMlp<T>(ps, prefix + ".mlp", cfg.channels, cfg.channels * cfg.mlp_ratio,
                          rng.child("mlp"));
    }

    // Stripe attention for one axis group on a normalized grid (N,C,H,W,D);
    // returns (N,C/3,H,W,D).
    Tensor<T> attend_axis(const Tensor<T>& x, int group) const {
        const auto& g = groups[group];
        const int64_t c = cfg.channels, c3 = c / 3, hg = cfg.heads / 3, dk = c / cfg.heads;
        auto [stripes, rec] = partition_stripes_batched(x, g.axis, cfg.sw);
        const int64_t b = stripes.dim(0), tk = stripes.dim(1);
        const int64_t n = rec.batch, m = rec.windows;

        auto flat = reshape(stripes, {b * tk, c});
        auto split_heads = [&](const Tensor<T>& w, const Tensor<T>& bias) {
            auto p = add(matmul(flat, w), bias);                       // (B*T, C/3)
            p = reshape(p, {b, tk, hg, dk});
            return reshape(permute(p, {0, 2, 1, 3}), {b * hg, tk, dk});
        };
        auto q = split_heads(g.wq, g.bq);
        auto k = split_heads(g.wk, g.bk);
        auto v = split_heads(g.wv, g.bv);

        Tensor<T> logits;  // (N, M, hg, T, T)
        if (cfg.use_cosine) {
            auto qn = l2_normalize(q, 2);
            auto kn = l2_normalize(k, 2);
            logits = reshape(bmm(qn, kn, false, true), {n, m, hg, tk, tk});
            auto tau = clamp_min(exp(g.tau_raw), static_cast<T>(cfg.tau_min));
            auto inv_tau = reshape(div(Tensor<T>::full({g.tau_raw.dim(0)}, T(1)), tau),
                                   {hg, 1, 1});
            logits = mul(logits, inv_tau);
        } else {
            logits = mul_scalar(bmm(q, k, false, true), T(1) / std::sqrt(static_cast<T>(dk)));
            logits = reshape(logits, {n, m, hg, tk, tk});
        }
        logits = add(logits, bias_lookup(g.bias_table, g.bias_idx, tk));
        if (g.key_mask.defined()) logits = add(logits, g.key_mask);
        auto attn = softmax(logits, 4);
        auto out = bmm(reshape(attn, {b * hg, tk, tk}), v);            // (B*hg, T, dk)
        out = reshape(permute(reshape(out, {b, hg, tk, dk}), {0, 2, 1, 3}), {b, tk, c3});
        return merge_stripes_batched(out, rec);
    }

    // Grouped cross-shaped attention with output projection, Concat(H,V,L) W^o.
    Tensor<T> attention(const Tensor<T>& x) const {
        std::vector<Tensor<T>> parts;
        for (int a = 0; a < 3; ++a) parts.push_back(attend_axis(x, a));
        auto cat = concat(parts, 1);  // (N,C,H,W,D)
        const int64_t n = cat.dim(0), c = cat.dim(1);
        const int64_t vox = cat.dim(2) * cat.dim(3) * cat.dim(4);
        auto tok = reshape(permute(cat, {0, 2, 3, 4, 1}), {n * vox, c});
        tok = wo.forward(tok);
        Shape back{n, cat.dim(2), cat.dim(3), cat.dim(4), c};
        return permute(reshape(tok, back), {0, 4, 1, 2, 3});
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 5)
            throw shape_error("CSwinBlock: expected (N,C,H,W,D), got " + shape_str(x.shape()));
        if (x.dim(1) != cfg.channels || x.dim(2) != cfg.grid[0] || x.dim(3) != cfg.grid[1] ||
            x.dim(4) != cfg.grid[2])
            throw shape_error("CSwinBlock: input " + shape_str(x.shape()) +
                              " does not match configured grid");
        auto h = add(x, attention(norm1.forward(x)));
        return add(h, mlp.forward(norm2.forward(h)));
    }
};

// Free-function form of the attention op (spatial shape preserved).
template <class T>
Tensor<T> cswin_attention(const Tensor<T>& grid, const CSwinBlock<T>& block) {
    if (grid.rank() == 4) {
        auto x = reshape(grid, {1, grid.dim(0), grid.dim(1), grid.dim(2), grid.dim(3)});
        auto y = block.attention(x);
        return reshape(y, {y.dim(1), y.dim(2), y.dim(3), y.dim(4)});
    }
    return block.attention(grid);
}

template <class T>
Tensor<T> cswin_block_forward(const Tensor<T>& grid, const CSwinBlock<T>& block) {
    if (grid.rank() == 4) {
        auto x = reshape(grid, {1, grid.dim(0), grid.dim(1), grid.dim(2), grid.dim(3)});
        auto y = block.forward(x);
        return reshape(y, {y.dim(1), y.dim(2), y.dim(3), y.dim(4)});
    }
    return block.forward(grid);
}

}  // namespace cswin
