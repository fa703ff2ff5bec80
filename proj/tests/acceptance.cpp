// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cswin/eval.hpp"
#include "cswin/finetune.hpp"
#include "cswin/gradsuite.hpp"
#include "cswin/phantom.hpp"
#include "cswin/ssl.hpp"

using namespace cswin;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
    int id;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;

    Criterion(int id_, std::string name_) : id(id_), name(std::move(name_)) {}
};

double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

ModelConfig desk_model() {
    ModelConfig mc;
    mc.input_shape = {3, 32, 32, 32};
    mc.base_dim = 6;
    mc.depths = {1, 1, 1, 1};
    mc.heads = {3, 6, 12, 24};
    mc.sw = {1, 2, 5, 5};
    mc.mlp_ratio = 2;
    return mc;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---- criterion 1: gradient suite ----------------------------------------------

Criterion criterion1() {
    Criterion c{1, "gradient suite (every layer and loss, 64-bit FD)"};
    auto res = run_gradient_suite();
    double worst = 0;
    std::string worst_name;
    for (const auto& item : res.items) {
        if (item.max_rel_err > worst) {
            worst = item.max_rel_err;
            worst_name = item.name;
        }
    }
    c.pass = res.all_pass && res.seconds < 300.0;
    c.detail = std::to_string(res.items.size()) + " checks, worst " + fmt(worst) + " (" +
               worst_name + "), " + fmt(res.seconds) + "s";
    c.seconds = res.seconds;
    return c;
}

// ---- criterion 2: stripe-attention oracle -------------------------------------

// Brute-force scaled cosine attention over one window.
std::vector<std::vector<double>> reference_attention(const std::vector<std::vector<double>>& q,
                                                     const std::vector<std::vector<double>>& k,
                                                     const std::vector<std::vector<double>>& v,
                                                     double tau) {
    const size_t t = q.size();
    std::vector<std::vector<double>> out(t, std::vector<double>(v[0].size(), 0.0));
    for (size_t i = 0; i < t; ++i) {
        std::vector<double> logits(t);
        for (size_t j = 0; j < t; ++j) {
            double dot = 0, na = 0, nb = 0;
            for (size_t x = 0; x < q[0].size(); ++x) {
                dot += q[i][x] * k[j][x];
                na += q[i][x] * q[i][x];
                nb += k[j][x] * k[j][x];
            }
            const double cos = (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
            logits[j] = cos / tau;
        }
        double mx = logits[0];
        for (double l : logits) mx = std::max(mx, l);
        double z = 0;
        std::vector<double> w(t);
        for (size_t j = 0; j < t; ++j) {
            w[j] = std::exp(logits[j] - mx);
            z += w[j];
        }
        for (size_t j = 0; j < t; ++j)
            for (size_t x = 0; x < v[0].size(); ++x) out[i][x] += (w[j] / z) * v[j][x];
    }
    return out;
}

Criterion criterion2() {
    Criterion c{2, "stripe-attention oracle (full window + receptive field)"};
    auto t0 = Clock::now();

    // full-window equivalence on a 4x4x4 token grid, sw >= 4
    CSwinBlockConfig bc;
    bc.channels = 6;
    bc.heads = 3;
    bc.sw = 4;
    bc.grid = {4, 4, 4};
    bc.use_cosine = true;
    ParamStore<double> ps(501);
    CSwinBlock<double> blk(ps, "blk", bc, Rng(502));
    for (int a = 0; a < 3; ++a) {
        auto& t = blk.groups[a].bias_table;
        std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    Rng rng(503);
    auto x = Tensor<double>::zeros({1, 6, 4, 4, 4});
    for (auto& v : x.data()) v = rng.normal();
    auto got = blk.attention(x);

    const int64_t tokens = 64, cdim = 6, c3 = 2, dk = 2;
    std::vector<std::vector<double>> feat(tokens, std::vector<double>(cdim));
    int64_t ti = 0;
    for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 4; ++w)
            for (int64_t d = 0; d < 4; ++d, ++ti)
                for (int64_t ch = 0; ch < cdim; ++ch)
                    feat[ti][ch] = x.data()[((ch * 4 + h) * 4 + w) * 4 + d];
    std::vector<std::vector<double>> cat(tokens, std::vector<double>(cdim));
    for (int g = 0; g < 3; ++g) {
        const auto& grp = blk.groups[g];
        auto project = [&](const Tensor<double>& w, const Tensor<double>& b) {
            std::vector<std::vector<double>> out(tokens, std::vector<double>(dk));
            for (int64_t t = 0; t < tokens; ++t)
                for (int64_t j = 0; j < dk; ++j) {
                    double acc = b.data()[j];
                    for (int64_t i = 0; i < cdim; ++i) acc += feat[t][i] * w.data()[i * c3 + j];
                    out[t][j] = acc;
                }
            return out;
        };
        auto out = reference_attention(project(grp.wq, grp.bq), project(grp.wk, grp.bk),
                                       project(grp.wv, grp.bv),
                                       std::max(std::exp(grp.tau_raw.data()[0]), 0.01));
        for (int64_t t = 0; t < tokens; ++t)
            for (int64_t j = 0; j < dk; ++j) cat[t][g * c3 + j] = out[t][j];
    }
    double full_err = 0;
    ti = 0;
    for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 4; ++w)
            for (int64_t d = 0; d < 4; ++d, ++ti)
                for (int64_t ch = 0; ch < cdim; ++ch) {
                    double want = blk.wo.b.data()[ch];
                    for (int64_t i = 0; i < cdim; ++i)
                        want += cat[ti][i] * blk.wo.w.data()[i * cdim + ch];
                    full_err = std::max(
                        full_err, std::fabs(got.data()[((ch * 4 + h) * 4 + w) * 4 + d] - want));
                }

    // receptive-field sparsity at sw = 1 via finite differences
    CSwinBlockConfig bs;
    bs.channels = 3;
    bs.heads = 3;
    bs.sw = 1;
    bs.grid = {4, 4, 4};
    ParamStore<double> ps2(504);
    CSwinBlock<double> blk2(ps2, "blk", bs, Rng(505));
    auto x2 = Tensor<double>::zeros({1, 3, 4, 4, 4});
    Rng rng2(506);
    for (auto& v : x2.data()) v = rng2.normal();
    const int64_t qi = 1, qj = 2, qk = 3;
    auto f = [&](const Tensor<double>& input) {
        NoGradGuard ng;
        auto out = blk2.attention(input);
        double acc = 0;
        for (int64_t ch = 0; ch < 3; ++ch) acc += out.data()[((ch * 4 + qi) * 4 + qj) * 4 + qk];
        return acc;
    };
    bool support_exact = true;
    int support_live = 0;
    for (int64_t a = 0; a < 4; ++a)
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t d = 0; d < 4; ++d) {
                const size_t idx = ((0 * 4 + a) * 4 + b) * 4 + d;
                const double saved = x2.data()[idx];
                x2.data()[idx] = saved + 1e-5;
                const double fp = f(x2);
                x2.data()[idx] = saved - 1e-5;
                const double fm = f(x2);
                x2.data()[idx] = saved;
                const double fd = (fp - fm) / 2e-5;
                const bool in_cross = (a == qi) || (b == qj) || (d == qk);
                if (!in_cross && fd != 0.0) support_exact = false;
                if (in_cross && std::fabs(fd) > 1e-8) ++support_live;
            }

    c.pass = full_err < 1e-5 && support_exact && support_live >= 10;
    c.detail = "full-window err " + fmt(full_err) + ", cross support exact=" +
               (support_exact ? "yes" : "NO") + " live=" + std::to_string(support_live);
    c.seconds = secs_since(t0);
    return c;
}

// ---- criterion 3: closed-form loss values ---------------------------------------

Criterion criterion3() {
    Criterion c{3, "closed-form loss values (NT-Xent, rotation, AWL)"};
    auto t0 = Clock::now();
    std::vector<std::string> problems;

    std::vector<double> e;
    for (int i = 0; i < 4; ++i) {
        e.push_back(1.0);
        e.push_back(0.0);
    }
    const double ntxent = contrastive_loss(Tensor<double>::from_data({4, 2}, e), 0.5).item();
    if (std::fabs(ntxent - std::log(3.0)) > 1e-6) problems.push_back("ntxent=" + fmt(ntxent));

    const double rot = rotation_loss(Tensor<double>::zeros({3, 4}), {0, 1, 2}).item();
    if (std::fabs(rot - std::log(4.0)) > 1e-6) problems.push_back("rot=" + fmt(rot));

    auto ones = Tensor<double>::from_data({3}, {1, 1, 1});
    const double a = 0.7, b = 1.3, d = 0.2;
    const double awl = awl_combine(Tensor<double>::scalar(a), Tensor<double>::scalar(b),
                                   Tensor<double>::scalar(d), ones)
                           .item();
    if (std::fabs(awl - (0.5 * (a + b + d) + std::log(8.0))) > 1e-6)
        problems.push_back("awl=" + fmt(awl));

    double worst_grad = 0;
    for (double c1 : {0.6, 1.0, 1.7}) {
        ParamStore<double> ps(601);
        auto cs = ps.create("c", {3});
        cs.data() = {c1, 1.1, 0.9};
        auto loss = awl_combine(Tensor<double>::scalar(a), Tensor<double>::scalar(b),
                                Tensor<double>::scalar(d), ps.get("c"));
        loss.backward();
        const double want = -a / (c1 * c1 * c1) + 2.0 * c1 / (1.0 + c1 * c1);
        worst_grad = std::max(worst_grad, std::fabs(cs.grad()[0] - want));
        auto rep = grad_check(ps, [&] {
            return awl_combine(Tensor<double>::scalar(a), Tensor<double>::scalar(b),
                               Tensor<double>::scalar(d), ps.get("c"));
        });
        worst_grad = std::max(worst_grad, rep.max_rel_err);
    }
    if (worst_grad > 1e-6) problems.push_back("awl_grad=" + fmt(worst_grad));

    c.pass = problems.empty();
    c.detail = problems.empty()
                   ? "ntxent=ln3, rot=ln4, awl=0.5*sum+ln8, dawl/dc err " + fmt(worst_grad)
                   : "mismatches:";
    for (const auto& p : problems) c.detail += " " + p;
    c.seconds = secs_since(t0);
    return c;
}

// ---- criterion 4: postprocessing oracle -------------------------------------------

void add_blob(std::vector<float>& map, Dims3 dims, Dims3 center, double sigma, double peak) {
    for (int64_t h = 0; h < dims[0]; ++h)
        for (int64_t w = 0; w < dims[1]; ++w)
            for (int64_t d = 0; d < dims[2]; ++d) {
                const double r2 = double(h - center[0]) * (h - center[0]) +
                                  double(w - center[1]) * (w - center[1]) +
                                  double(d - center[2]) * (d - center[2]);
                const double v = peak * std::exp(-r2 / (2 * sigma * sigma));
                if (v < 0.4 * peak) continue;
                map[(h * dims[1] + w) * dims[2] + d] = float(v);
            }
}

Criterion criterion4() {
    Criterion c{4, "postprocessing oracle (blob constructions + termination)"};
    auto t0 = Clock::now();
    std::vector<std::string> problems;

    const Dims3 dims{16, 16, 8};
    std::vector<float> one(16 * 16 * 8, 0.0f);
    add_blob(one, dims, {8, 8, 4}, 2.0, 0.9);
    auto c1 = extract_candidates(one, dims, 0.4, 0.05);
    std::set<int64_t> want;
    for (int64_t i = 0; i < 16 * 16 * 8; ++i)
        if (one[i] >= 0.4f * 0.9f) want.insert(i);
    if (c1.size() != 1 || std::fabs(c1[0].confidence - 0.9) > 1e-6 ||
        std::set<int64_t>(c1[0].voxels.begin(), c1[0].voxels.end()) != want)
        problems.push_back("one-blob");

    const Dims3 dims2{24, 12, 8};
    std::vector<float> two(24 * 12 * 8, 0.0f);
    add_blob(two, dims2, {5, 6, 4}, 1.5, 0.9);
    add_blob(two, dims2, {18, 6, 4}, 1.5, 0.5);
    auto c2 = extract_candidates(two, dims2, 0.4, 0.05);
    bool two_ok = c2.size() == 2 && std::fabs(c2[0].confidence - 0.9) < 1e-6 &&
                  std::fabs(c2[1].confidence - 0.5) < 1e-6;
    if (two_ok) {
        std::set<int64_t> first(c2[0].voxels.begin(), c2[0].voxels.end());
        for (int64_t v : c2[1].voxels)
            if (first.count(v)) two_ok = false;
    }
    if (!two_ok) problems.push_back("two-blob");

    Rng rng(701);
    std::vector<float> big(64 * 64 * 64);
    for (auto& v : big) v = float(rng.uniform());
    auto tt = Clock::now();
    auto cands = extract_candidates(big, {64, 64, 64}, 0.4, 0.05);
    const double term = secs_since(tt);
    if (term >= 1.0 || cands.empty()) problems.push_back("termination " + fmt(term) + "s");

    c.pass = problems.empty();
    c.detail = "one-blob + two-blob exact, 64^3 random map -> " + std::to_string(cands.size()) +
               " candidates in " + fmt(term) + "s";
    if (!problems.empty()) {
        c.detail = "failed:";
        for (const auto& p : problems) c.detail += " " + p;
    }
    c.seconds = secs_since(t0);
    return c;
}

// ---- criterion 5: metric oracles ---------------------------------------------------

double pair_counting_auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
    double num = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        for (size_t j = 0; j < labels.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                num += 1.0;
            else if (scores[i] == scores[j])
                num += 0.5;
        }
    return num / double(pairs);
}

double wilcoxon_oracle(const std::vector<double>& deltas) {
    std::vector<double> d;
    for (double x : deltas)
        if (x != 0.0) d.push_back(x);
    const size_t n = d.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return std::fabs(d[a]) < std::fabs(d[b]); });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && std::fabs(d[idx[j]]) == std::fabs(d[idx[i]])) ++j;
        for (size_t k = i; k < j; ++k) rank[idx[k]] = 0.5 * double(i + 1 + j);
        i = j;
    }
    double w_obs = 0, total = 0;
    for (size_t k = 0; k < n; ++k) {
        total += rank[k];
        if (d[k] > 0) w_obs += rank[k];
    }
    std::map<double, double> dist{{0.0, 1.0}};
    for (size_t k = 0; k < n; ++k) {
        std::map<double, double> next;
        for (const auto& [w, cnt] : dist) {
            next[w] += cnt;
            next[w + rank[k]] += cnt;
        }
        dist = std::move(next);
    }
    const double hi = std::max(w_obs, total - w_obs), lo = std::min(w_obs, total - w_obs);
    double count = 0, all = 0;
    for (const auto& [w, cnt] : dist) {
        all += cnt;
        if (w >= hi - 1e-12 || w <= lo + 1e-12) count += cnt;
    }
    return std::min(1.0, count / all);
}

Criterion criterion5() {
    Criterion c{5, "metric oracles (AUROC, AP, Wilcoxon, Holm-Bonferroni)"};
    auto t0 = Clock::now();
    std::vector<std::string> problems;

    Rng rng(801);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> labels;
        std::vector<double> scores;
        for (int i = 0; i < 12; ++i) {
            labels.push_back(rng.uniform() < 0.5 ? 1 : 0);
            scores.push_back(std::floor(rng.uniform() * 10.0) / 10.0);  // forces ties
        }
        int pos = 0;
        for (int l : labels) pos += l;
        if (pos == 0) labels[0] = 1;
        if (pos == 12) labels[0] = 0;
        if (auroc(labels, scores) != pair_counting_auroc(labels, scores)) {
            problems.push_back("auroc trial " + std::to_string(trial));
            break;
        }
    }

    for (int trial = 0; trial < 10; ++trial) {
        std::vector<PooledCandidate> cands;
        int64_t budget = 4;
        for (int i = 0; i < 6; ++i) {
            const bool tp = budget > 0 && rng.uniform() < 0.5;
            if (tp) --budget;
            cands.push_back({std::floor(rng.uniform() * 16.0) / 16.0, tp});
        }
        // independent enumeration of the stepwise PR curve
        auto sorted = cands;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const PooledCandidate& a, const PooledCandidate& b) {
                             return a.confidence > b.confidence;
                         });
        double ap = 0, prev_r = 0;
        int64_t tp = 0;
        for (size_t k = 0; k < sorted.size(); ++k) {
            tp += sorted[k].is_tp ? 1 : 0;
            ap += (double(tp) / 4.0 - prev_r) * (double(tp) / double(k + 1));
            prev_r = double(tp) / 4.0;
        }
        if (average_precision(cands, 4) != ap) {
            problems.push_back("ap trial " + std::to_string(trial));
            break;
        }
    }

    for (size_t n : {5, 7, 9, 12}) {
        std::vector<double> d;
        for (size_t i = 0; i < n; ++i)
            d.push_back((rng.uniform() < 0.7 ? 1 : -1) * (0.5 + std::floor(rng.uniform() * 4.0)));
        if (wilcoxon_signed_rank(d) != wilcoxon_oracle(d)) {
            problems.push_back("wilcoxon n=" + std::to_string(n));
            break;
        }
    }
    if (std::fabs(wilcoxon_signed_rank({0.1, 0.5, 0.9, 1.3, 2.2, 3.1}) - 2.0 / 64.0) > 1e-15)
        problems.push_back("wilcoxon exact n=6");

    auto flags = holm_bonferroni({0.001, 0.0026, 0.03}, 0.005);
    if (!(flags[0] && !flags[1] && !flags[2])) problems.push_back("holm");

    c.pass = problems.empty();
    c.detail = problems.empty() ? "20 AUROC sets, 10 AP scenarios, Wilcoxon n<=12, Holm m=3 exact"
                                : "failed:";
    for (const auto& p : problems) c.detail += " " + p;
    c.seconds = secs_since(t0);
    return c;
}

// ---- criterion 6: desk-scale training ----------------------------------------------

double validation_ap(CSwinUNet<float>& model, const std::vector<Phantom>& val) {
    NoGradGuard ng;
    std::vector<EvalRecord> recs;
    for (size_t i = 0; i < val.size(); ++i) {
        std::vector<const Volume*> one{&val[i].volume};
        auto det = model.detection_map(volumes_to_batch<float>(one));
        Volume dv = Volume::zeros({1, val[i].volume.H(), val[i].volume.W(), val[i].volume.D()},
                                  val[i].volume.spacing);
        dv.data.assign(det.data().begin(), det.data().end());
        recs.push_back(evaluate_case("case_" + std::to_string(i), dv, val[i].mask));
    }
    return summarize(std::move(recs)).ap;
}

Criterion criterion6a() {
    Criterion c{6, "6a: overfit one phantom to soft dice > 0.8 in <= 500 steps"};
    auto t0 = Clock::now();
    SynthConfig sc;
    Phantom ph;
    for (int i = 0;; ++i) {
        ph = make_phantom(sc, 1001, i);
        if (ph.positive) break;
    }
    FinetuneConfig fc;
    fc.model = desk_model();
    fc.epochs = 500;  // batch 1: one optimizer step per epoch
    fc.batch = 1;
    fc.lr = 1e-3;
    fc.warmup_epochs = 10;
    fc.seed = 11;
    auto run = finetune<float>({ph.volume}, {ph.mask}, {}, {}, fc);
    NoGradGuard ng;
    std::vector<const Volume*> v{&ph.volume};
    auto probs = run.model->forward(volumes_to_batch<float>(v));
    auto target = reshape(volume_to_tensor<float>(ph.mask), {1, 32, 32, 32});
    const double dice = soft_dice(probs, target);
    c.seconds = secs_since(t0);
    c.pass = dice > 0.8 && c.seconds < 1800;
    c.detail = "soft dice " + fmt(dice) + " after 500 steps, " + fmt(c.seconds) + "s";
    return c;
}

Criterion criterion6b() {
    Criterion c{6, "6b: SSL pretraining reaches held-out rotation accuracy > 90%"};
    auto t0 = Clock::now();
    SynthConfig sc;
    std::vector<Volume> train, held;
    for (int i = 0; i < 32; ++i) train.push_back(make_phantom(sc, 2001, i).volume);
    for (int i = 0; i < 8; ++i) held.push_back(make_phantom(sc, 2002, 100 + i).volume);
    PretrainConfig pc;
    pc.model = desk_model();
    pc.epochs = 30;
    pc.batch_pairs = 4;
    pc.lr = 1e-3;
    pc.warmup_epochs = 2;
    pc.seed = 21;
    auto run = pretrain<float>(train, pc);
    const double acc = rotation_accuracy(*run.encoder, *run.heads, held, pc.augment, 999);
    const double first = run.history.front().l_task, last = run.history.back().l_task;
    bool weights_ok = true;
    for (const auto& e : run.history)
        for (double w : {e.w_cl, e.w_cr, e.w_rot})
            if (!(w > 0.0 && w < 1000.0)) weights_ok = false;
    c.seconds = secs_since(t0);
    c.pass = acc > 0.9 && last < first && weights_ok && c.seconds < 1800;
    c.detail = "rotation acc " + fmt(acc) + ", L_task " + fmt(first) + " -> " + fmt(last) +
               ", weights in (0,1000): " + (weights_ok ? "yes" : "NO") + ", " + fmt(c.seconds) +
               "s";
    return c;
}

Criterion criterion6c(const fs::path& dir) {
    Criterion c{6, "6c: pretrained init beats random init at 25% labels (val AP)"};
    auto t0 = Clock::now();
    // a harder corpus than 6a/6b: with 16 labeled cases and a 10-epoch
    // budget, random init is still early on the learning curve, which is
    // where the pretraining advantage is visible
    SynthConfig sc;
    sc.noise_sigma = 0.35;
    sc.lesion_radius_inplane = {2.5, 4.5};
    sc.lesion_radius_depth = {1.5, 2.5};
    std::vector<Phantom> corpus;
    for (int i = 0; i < 64; ++i) corpus.push_back(make_phantom(sc, 3001, i));
    std::vector<Volume> unlabeled;
    for (const auto& p : corpus) unlabeled.push_back(p.volume);

    PretrainConfig pc;
    pc.model = desk_model();
    pc.epochs = 25;
    pc.batch_pairs = 4;
    pc.lr = 1e-3;
    pc.warmup_epochs = 2;
    pc.seed = 31;
    auto pre = pretrain<float>(unlabeled, pc);
    const fs::path ckpt = dir / "c6_pre.ckpt";
    nlohmann::json meta{{"kind", "pretrain"}, {"seed", pc.seed}, {"config", pc.model.to_json()}};
    Checkpoint::from_store(meta, pre.encoder->store()).save(ckpt);

    // 25% of the corpus labeled for training, the rest held out for AP
    std::vector<Volume> tv, tm;
    std::vector<Phantom> val;
    for (int i = 0; i < 64; ++i) {
        if (i % 4 == 0) {
            tv.push_back(corpus[i].volume);
            tm.push_back(corpus[i].mask);
        } else {
            val.push_back(corpus[i]);
        }
    }
    FinetuneConfig fc;
    fc.model = desk_model();
    fc.epochs = 10;
    fc.batch = 4;
    fc.lr = 1e-3;
    fc.warmup_epochs = 4;
    fc.seed = 41;
    fc.init = "random";
    auto rnd = finetune<float>(tv, tm, {}, {}, fc);
    fc.init = ckpt.string();
    auto pret = finetune<float>(tv, tm, {}, {}, fc);
    const double ap_r = validation_ap(*rnd.model, val);
    const double ap_p = validation_ap(*pret.model, val);
    c.seconds = secs_since(t0);
    c.pass = ap_p > ap_r && c.seconds < 3 * 1800;
    c.detail = "val AP random " + fmt(ap_r) + " vs pretrained " + fmt(ap_p) + ", " +
               fmt(c.seconds) + "s";
    return c;
}

// ---- criterion 7: ablation hooks -----------------------------------------------------

Criterion criterion7(const fs::path& dir) {
    Criterion c{7, "ablation hooks (cosine toggle, sw schedule, AWL vs equal weight)"};
    auto t0 = Clock::now();
    SynthConfig sc;
    std::vector<Phantom> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(make_phantom(sc, 4001, i));
    std::vector<Volume> vols, masks;
    for (const auto& p : corpus) {
        vols.push_back(p.volume);
        masks.push_back(p.mask);
    }
    std::vector<std::string> ran;
    bool ok = true;

    struct Arm {
        const char* name;
        bool cosine;
        std::array<int64_t, 4> sw;
    };
    const Arm arms[3] = {{"cosine_sw1255", true, {1, 2, 5, 5}},
                         {"cosine_sw2", true, {2, 2, 2, 2}},
                         {"nocosine_sw2", false, {2, 2, 2, 2}}};
    for (const auto& arm : arms) {
        FinetuneConfig fc;
        fc.model = desk_model();
        fc.model.use_cosine = arm.cosine;
        fc.model.sw = arm.sw;
        fc.epochs = 6;
        fc.batch = 4;
        fc.lr = 1e-3;
        fc.warmup_epochs = 1;
        fc.seed = 51;
        auto run = finetune<float>(vols, masks, {vols[0]}, {masks[0]}, fc);
        nlohmann::json j;
        j["arm"] = arm.name;
        j["epochs"] = nlohmann::json::array();
        for (const auto& e : run.history) {
            if (!std::isfinite(e.train_loss)) ok = false;
            j["epochs"].push_back(e.to_json());
        }
        std::ofstream f(dir / (std::string("ablation_") + arm.name + ".json"));
        f << j.dump(2) << "\n";
        ran.push_back(arm.name);
    }

    for (bool use_awl : {true, false}) {
        PretrainConfig pc;
        pc.model = desk_model();
        pc.epochs = 4;
        pc.batch_pairs = 4;
        pc.warmup_epochs = 1;
        pc.use_awl = use_awl;
        pc.seed = 52;
        auto run = pretrain<float>(vols, pc);
        nlohmann::json j;
        j["arm"] = use_awl ? "awl" : "equal_weight";
        j["epochs"] = nlohmann::json::array();
        for (const auto& e : run.history) {
            if (!std::isfinite(e.l_task)) ok = false;
            j["epochs"].push_back(e.to_json());
        }
        std::ofstream f(dir /
                        (std::string("ablation_") + (use_awl ? "awl" : "equal_weight") + ".json"));
        f << j.dump(2) << "\n";
        ran.push_back(use_awl ? "awl" : "equal_weight");
    }

    c.pass = ok;
    c.detail = "arms without divergence:";
    for (const auto& r : ran) c.detail += " " + r;
    c.seconds = secs_since(t0);
    return c;
}

// ---- criterion 8: reproducibility ----------------------------------------------------

Criterion criterion8(const fs::path& dir) {
    Criterion c{8, "reproducibility (bit-identical checkpoints and metrics)"};
    auto t0 = Clock::now();
    SynthConfig sc;
    std::vector<Phantom> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(make_phantom(sc, 5001, i));
    std::vector<Volume> vols, masks;
    for (const auto& p : corpus) {
        vols.push_back(p.volume);
        masks.push_back(p.mask);
    }

    auto run_pre = [&](const fs::path& ckpt, const fs::path& hist) {
        PretrainConfig pc;
        pc.model = desk_model();
        pc.epochs = 3;
        pc.batch_pairs = 4;
        pc.warmup_epochs = 1;
        pc.seed = 61;
        auto run = pretrain<float>(vols, pc);
        nlohmann::json meta{{"kind", "pretrain"},
                            {"seed", pc.seed},
                            {"config", pc.model.to_json()},
                            {"pretrain_config", pc.to_json()}};
        Checkpoint::from_store(meta, run.encoder->store()).save(ckpt);
        nlohmann::json h;
        h["epochs"] = nlohmann::json::array();
        for (const auto& e : run.history) h["epochs"].push_back(e.to_json());
        std::ofstream f(hist);
        f << h.dump(2) << "\n";
    };
    run_pre(dir / "r1.ckpt", dir / "r1.json");
    run_pre(dir / "r2.ckpt", dir / "r2.json");
    const bool pre_same = slurp(dir / "r1.ckpt") == slurp(dir / "r2.ckpt") &&
                          slurp(dir / "r1.json") == slurp(dir / "r2.json");

    auto run_fin = [&](const fs::path& ckpt, const fs::path& hist) {
        FinetuneConfig fc;
        fc.model = desk_model();
        fc.epochs = 3;
        fc.batch = 4;
        fc.warmup_epochs = 1;
        fc.seed = 62;
        auto run = finetune<float>(vols, masks, {vols[0]}, {masks[0]}, fc);
        nlohmann::json meta{{"kind", "model"},
                            {"seed", fc.seed},
                            {"config", fc.model.to_json()},
                            {"finetune_config", fc.to_json()}};
        Checkpoint::from_store(meta, run.model->store()).save(ckpt);
        nlohmann::json h;
        h["epochs"] = nlohmann::json::array();
        for (const auto& e : run.history) h["epochs"].push_back(e.to_json());
        std::ofstream f(hist);
        f << h.dump(2) << "\n";
    };
    run_fin(dir / "f1.ckpt", dir / "f1.json");
    run_fin(dir / "f2.ckpt", dir / "f2.json");
    const bool fin_same = slurp(dir / "f1.ckpt") == slurp(dir / "f2.ckpt") &&
                          slurp(dir / "f1.json") == slurp(dir / "f2.json");

    c.pass = pre_same && fin_same;
    c.detail = std::string("pretrain bytes identical: ") + (pre_same ? "yes" : "NO") +
               ", finetune bytes identical: " + (fin_same ? "yes" : "NO");
    c.seconds = secs_since(t0);
    return c;
}

}  // namespace

int main() {
    setbuf(stdout, nullptr);
    const fs::path dir = fs::temp_directory_path() / "cswin_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<Criterion> results;
    results.push_back(criterion1());
    results.push_back(criterion2());
    results.push_back(criterion3());
    results.push_back(criterion4());
    results.push_back(criterion5());
    results.push_back(criterion6a());
    results.push_back(criterion6b());
    results.push_back(criterion6c(dir));
    results.push_back(criterion7(dir));
    results.push_back(criterion8(dir));

    int failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] criterion %d: %s -- %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.detail.c_str(), r.seconds);
        if (!r.pass) ++failures;
    }
    std::printf("acceptance: %zu checks, %d failure(s)\n", results.size(), failures);
    return failures;
}
