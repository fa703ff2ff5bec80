#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include "cswin/errors.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// A lesion candidate: one connected component around a confidence peak,
// extracted at 40% of that peak.
struct LesionCandidate {
    std::vector<int64_t> voxels;  // sorted linear indices
    double confidence = 0.0;      // peak map value within the component
};

namespace detail {

// 26- or 6-connected neighbor offsets for an (H,W,D) grid.
inline std::vector<std::array<int64_t, 3>> neighbor_offsets(int connectivity) {
    std::vector<std::array<int64_t, 3>> offs;
    if (connectivity == 6) {
        offs = {{{1, 0, 0}}, {{-1, 0, 0}}, {{0, 1, 0}}, {{0, -1, 0}}, {{0, 0, 1}}, {{0, 0, -1}}};
        return offs;
    }
    if (connectivity != 26) throw value_error("connectivity must be 6 or 26");
    for (int64_t a = -1; a <= 1; ++a)
        for (int64_t b = -1; b <= 1; ++b)
            for (int64_t c = -1; c <= 1; ++c)
                if (a || b || c) offs.push_back({a, b, c});
    return offs;
}

}  // namespace detail

// Labels the 26-connected (or 6-connected) components of a boolean volume;
// labels start at 1, 0 is background. Returns the label grid and the count.
inline std::pair<std::vector<int32_t>, int32_t> connected_components(
    const std::vector<uint8_t>& mask, Dims3 dims, int connectivity = 26) {
    const int64_t n = dims[0] * dims[1] * dims[2];
    if (static_cast<int64_t>(mask.size()) != n)
        throw shape_error("connected_components: mask size does not match dims");
    auto offs = detail::neighbor_offsets(connectivity);
    std::vector<int32_t> labels(mask.size(), 0);
    int32_t next = 0;
    std::vector<int64_t> stack;
    for (int64_t seed = 0; seed < n; ++seed) {
        if (!mask[seed] || labels[seed]) continue;
        ++next;
        labels[seed] = next;
        stack.assign(1, seed);
        while (!stack.empty()) {
            const int64_t cur = stack.back();
            stack.pop_back();
            const int64_t d = cur % dims[2];
            const int64_t w = (cur / dims[2]) % dims[1];
            const int64_t h = cur / (dims[1] * dims[2]);
            for (const auto& o : offs) {
                const int64_t nh = h + o[0], nw = w + o[1], nd = d + o[2];
                if (nh < 0 || nh >= dims[0] || nw < 0 || nw >= dims[1] || nd < 0 || nd >= dims[2])
                    continue;
                const int64_t ni = (nh * dims[1] + nw) * dims[2] + nd;
                if (mask[ni] && !labels[ni]) {
                    labels[ni] = next;
                    stack.push_back(ni);
                }
            }
        }
    }
    return {std::move(labels), next};
}

// Iterative peak extraction: find the global peak p, grow the connected
// component of voxels >= rel_threshold * p around it, emit it with
// confidence p, zero it, repeat until the remaining peak drops below
// min_peak. Candidates come out voxel-disjoint in non-increasing confidence
// order.
inline std::vector<LesionCandidate> extract_candidates(const std::vector<float>& map, Dims3 dims,
                                                       double rel_threshold = 0.4,
                                                       double min_peak = 0.05,
                                                       int connectivity = 26) {
    const int64_t n = dims[0] * dims[1] * dims[2];
    if (static_cast<int64_t>(map.size()) != n)
        throw shape_error("extract_candidates: map size does not match dims");
    for (float v : map)
        if (!(v >= 0.0f && v <= 1.0f))
            throw value_error("extract_candidates: map values must lie in [0,1]");
    if (!(rel_threshold > 0.0 && rel_threshold <= 1.0))
        throw value_error("extract_candidates: rel_threshold must be in (0,1]");

    auto offs = detail::neighbor_offsets(connectivity);
    std::vector<float> work = map;
    // max-heap with lazy invalidation: zeroed voxels are skipped on pop
    std::priority_queue<std::pair<float, int64_t>> heap;
    for (int64_t i = 0; i < n; ++i)
        if (work[i] >= min_peak) heap.emplace(work[i], i);

    std::vector<LesionCandidate> cands;
    std::vector<int64_t> stack;
    while (!heap.empty()) {
        auto [val, idx] = heap.top();
        heap.pop();
        if (work[idx] != val) continue;  // stale entry
        if (val < min_peak) break;

        const float cut = static_cast<float>(rel_threshold * val);
        LesionCandidate cand;
        cand.confidence = static_cast<double>(val);
        stack.assign(1, idx);
        cand.voxels.push_back(idx);
        work[idx] = 0.0f;
        while (!stack.empty()) {
            const int64_t cur = stack.back();
            stack.pop_back();
            const int64_t d = cur % dims[2];
            const int64_t w = (cur / dims[2]) % dims[1];
            const int64_t h = cur / (dims[1] * dims[2]);
            for (const auto& o : offs) {
                const int64_t nh = h + o[0], nw = w + o[1], nd = d + o[2];
                if (nh < 0 || nh >= dims[0] || nw < 0 || nw >= dims[1] || nd < 0 || nd >= dims[2])
                    continue;
                const int64_t ni = (nh * dims[1] + nw) * dims[2] + nd;
                if (work[ni] >= cut && work[ni] > 0.0f) {
                    work[ni] = 0.0f;
                    cand.voxels.push_back(ni);
                    stack.push_back(ni);
                }
            }
        }
        std::sort(cand.voxels.begin(), cand.voxels.end());
        cands.push_back(std::move(cand));
    }
    return cands;
}

inline std::vector<LesionCandidate> extract_candidates(const Volume& det, double rel_threshold = 0.4,
                                                       double min_peak = 0.05,
                                                       int connectivity = 26) {
    if (det.C() != 1)
        throw shape_error("extract_candidates: detection map must have one channel, got " +
                          shape_str(det.shape));
    return extract_candidates(det.data, {det.H(), det.W(), det.D()}, rel_threshold, min_peak,
                              connectivity);
}

// ---- lesion matching ------------------------------------------------------------

struct CandidateMatch {
    double confidence = 0.0;
    int32_t matched_gt = -1;  // -1: false positive
    double dice = 0.0;
};

struct MatchResult {
    std::vector<CandidateMatch> candidates;  // candidate order preserved
    std::vector<uint8_t> gt_matched;         // per GT component
    int64_t true_positives = 0, false_positives = 0, false_negatives = 0;
};

// Greedy assignment in descending candidate confidence: each candidate takes
// the unmatched GT component of highest dice if dice >= dice_threshold,
// otherwise it is a false positive. A GT lesion is matched at most once.
inline MatchResult match_lesions(const std::vector<LesionCandidate>& cands,
                                 const std::vector<int32_t>& gt_labels, int32_t gt_count,
                                 double dice_threshold = 0.1) {
    MatchResult res;
    std::vector<int64_t> gt_size(static_cast<size_t>(gt_count) + 1, 0);
    for (int32_t l : gt_labels)
        if (l > 0) ++gt_size[static_cast<size_t>(l)];
    res.gt_matched.assign(static_cast<size_t>(gt_count), 0);

    // candidates arrive confidence-sorted from extract_candidates; keep that
    // order for the greedy pass
    for (const auto& cand : cands) {
        std::vector<int64_t> overlap(static_cast<size_t>(gt_count) + 1, 0);
        for (int64_t v : cand.voxels) {
            const int32_t l = gt_labels[static_cast<size_t>(v)];
            if (l > 0) ++overlap[static_cast<size_t>(l)];
        }
        CandidateMatch m;
        m.confidence = cand.confidence;
        double best_dice = 0.0;
        int32_t best = -1;
        for (int32_t l = 1; l <= gt_count; ++l) {
            if (res.gt_matched[static_cast<size_t>(l - 1)]) continue;
            if (!overlap[static_cast<size_t>(l)]) continue;
            const double dice =
                2.0 * static_cast<double>(overlap[static_cast<size_t>(l)]) /
                static_cast<double>(static_cast<int64_t>(cand.voxels.size()) + gt_size[l]);
            if (dice > best_dice) {
                best_dice = dice;
                best = l;
            }
        }
        if (best > 0 && best_dice >= dice_threshold) {
            m.matched_gt = best - 1;
            m.dice = best_dice;
            res.gt_matched[static_cast<size_t>(best - 1)] = 1;
            ++res.true_positives;
        } else {
            ++res.false_positives;
        }
        res.candidates.push_back(m);
    }
    res.false_negatives = gt_count - res.true_positives;
    return res;
}

// Patient-level score: maximum candidate confidence, 0 with no candidates.
inline double patient_score(const std::vector<LesionCandidate>& cands) {
    double best = 0.0;
    for (const auto& c : cands) best = std::max(best, c.confidence);
    return best;
}

// ---- patient / lesion metrics -----------------------------------------------------

// Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(tie), computed from tied
// ranks; equals the trapezoidal ROC area.
inline double auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size())
        throw value_error("auroc: labels and scores differ in length");
    int64_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw data_error("auroc: both classes must be present (got " + std::to_string(pos) +
                         " positives, " + std::to_string(neg) + " negatives)");
    const size_t n = scores.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k)
            if (labels[idx[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * (pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

struct RocPoint {
    double threshold, fpr, tpr;
};

inline std::vector<RocPoint> roc_curve(const std::vector<int>& labels,
                                       const std::vector<double>& scores) {
    const size_t n = scores.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    double tp = 0, fp = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? tp : fp)++;
            ++j;
        }
        pts.push_back({scores[idx[i]], neg ? fp / neg : 0.0, pos ? tp / pos : 0.0});
        i = j;
    }
    return pts;
}

// One pooled candidate for lesion-level PR analysis.
struct PooledCandidate {
    double confidence = 0.0;
    bool is_tp = false;
};

// Step-integrated average precision: sort by confidence descending and
// accumulate sum (R_k - R_{k-1}) P_k. False negatives cap the max recall.
inline double average_precision(std::vector<PooledCandidate> cands, int64_t total_gt) {
    if (total_gt < 1) throw data_error("average_precision: needs at least one GT lesion");
    std::stable_sort(cands.begin(), cands.end(),
                     [](const PooledCandidate& a, const PooledCandidate& b) {
                         return a.confidence > b.confidence;
                     });
    double ap = 0.0, prev_recall = 0.0;
    int64_t tp = 0;
    for (size_t k = 0; k < cands.size(); ++k) {
        if (cands[k].is_tp) ++tp;
        const double recall = static_cast<double>(tp) / static_cast<double>(total_gt);
        const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

struct PrPoint {
    double confidence, recall, precision;
};

inline std::vector<PrPoint> pr_curve(std::vector<PooledCandidate> cands, int64_t total_gt) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const PooledCandidate& a, const PooledCandidate& b) {
                         return a.confidence > b.confidence;
                     });
    std::vector<PrPoint> pts;
    int64_t tp = 0;
    for (size_t k = 0; k < cands.size(); ++k) {
        if (cands[k].is_tp) ++tp;
        pts.push_back({cands[k].confidence,
                       static_cast<double>(tp) / static_cast<double>(total_gt),
                       static_cast<double>(tp) / static_cast<double>(k + 1)});
    }
    return pts;
}

// ---- statistical tests ---------------------------------------------------------------

// Two-sided Wilcoxon signed-rank test. Zero deltas are dropped; requires at
// least 5 nonzero deltas. Exact enumeration of all 2^n sign assignments for
// n <= 12, normal approximation with tie correction and continuity
// correction beyond.
inline double wilcoxon_signed_rank(const std::vector<double>& deltas) {
    std::vector<double> d;
    for (double x : deltas)
        if (x != 0.0) d.push_back(x);
    if (d.empty()) throw data_error("wilcoxon_signed_rank: all deltas are zero");
    const size_t n = d.size();
    if (n < 5)
        throw data_error("wilcoxon_signed_rank: needs >= 5 nonzero deltas, got " +
                         std::to_string(n));

    // tied ranks of |d|
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return std::fabs(d[a]) < std::fabs(d[b]); });
    std::vector<double> rank(n);
    std::vector<int64_t> tie_sizes;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && std::fabs(d[idx[j]]) == std::fabs(d[idx[i]])) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);
        for (size_t k = i; k < j; ++k) rank[idx[k]] = avg;
        tie_sizes.push_back(static_cast<int64_t>(j - i));
        i = j;
    }
    double w_plus = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (d[k] > 0) w_plus += rank[k];

    const double total = 0.5 * static_cast<double>(n) * static_cast<double>(n + 1);
    if (n <= 12) {
        const double hi = std::max(w_plus, total - w_plus);
        const double lo = std::min(w_plus, total - w_plus);
        const uint64_t assignments = 1ull << n;
        uint64_t count = 0;
        for (uint64_t m = 0; m < assignments; ++m) {
            double w = 0.0;
            for (size_t k = 0; k < n; ++k)
                if (m & (1ull << k)) w += rank[k];
            if (w >= hi - 1e-12 || w <= lo + 1e-12) ++count;
        }
        return std::min(1.0, static_cast<double>(count) / static_cast<double>(assignments));
    }
    const double mean = total / 2.0;
    double var = static_cast<double>(n) * (n + 1) * (2.0 * n + 1) / 24.0;
    for (int64_t t : tie_sizes)
        var -= static_cast<double>(t * t * t - t) / 48.0;
    double z = w_plus - mean;
    z -= (z > 0 ? 0.5 : (z < 0 ? -0.5 : 0.0));  // continuity correction
    z /= std::sqrt(var);
    return std::min(1.0, std::erfc(std::fabs(z) / std::sqrt(2.0)));
}

// Holm-Bonferroni step-down rejection at level alpha: sort p ascending,
// reject while p_(i) <= alpha / (m - i + 1), stop at the first failure.
inline std::vector<bool> holm_bonferroni(const std::vector<double>& pvalues,
                                         double alpha = 0.005) {
    for (double p : pvalues)
        if (!(p >= 0.0 && p <= 1.0))
            throw value_error("holm_bonferroni: p-values must lie in [0,1]");
    const size_t m = pvalues.size();
    std::vector<size_t> idx(m);
    for (size_t i = 0; i < m; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return pvalues[a] < pvalues[b]; });
    std::vector<bool> reject(m, false);
    for (size_t i = 0; i < m; ++i) {
        if (pvalues[idx[i]] <= alpha / static_cast<double>(m - i)) {
            reject[idx[i]] = true;
        } else {
            break;
        }
    }
    return reject;
}

}  // namespace cswin
