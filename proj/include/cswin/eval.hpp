#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "cswin/lesion.hpp"
#include "cswin/volume.hpp"

namespace cswin {

// Case-level and corpus-level detection evaluation: detection maps are
// decomposed into lesion candidates, matched greedily against GT components,
// then summarized to patient-level AUROC and lesion-level AP.

struct EvalConfig {
    double rel_threshold = 0.4;
    double min_peak = 0.05;
    int connectivity = 26;
    double match_dice = 0.1;

    nlohmann::json to_json() const {
        return {{"rel_threshold", rel_threshold},
                {"min_peak", min_peak},
                {"connectivity", connectivity},
                {"match_dice", match_dice}};
    }
    static EvalConfig from_json(const nlohmann::json& j) {
        EvalConfig c;
        if (j.contains("rel_threshold")) c.rel_threshold = j.at("rel_threshold");
        if (j.contains("min_peak")) c.min_peak = j.at("min_peak");
        if (j.contains("connectivity")) c.connectivity = j.at("connectivity");
        if (j.contains("match_dice")) c.match_dice = j.at("match_dice");
        return c;
    }
};

// Per-case record feeding AUROC/AP.
struct EvalRecord {
    std::string case_id;
    int label = 0;       // 1 when the GT mask has any lesion
    double score = 0.0;  // patient score: max candidate confidence
    std::vector<CandidateMatch> candidates;
    int64_t gt_lesions = 0;
    int64_t tp = 0, fp = 0, fn = 0;
};

inline EvalRecord evaluate_case(const std::string& id, const Volume& det, const Volume& gt,
                                const EvalConfig& cfg = {}) {
    if (det.H() != gt.H() || det.W() != gt.W() || det.D() != gt.D())
        throw shape_error("evaluate_case: detection map " + shape_str(det.shape) +
                          " does not match GT " + shape_str(gt.shape));
    EvalRecord rec;
    rec.case_id = id;

    std::vector<uint8_t> mask(static_cast<size_t>(gt.voxels()));
    for (int64_t i = 0; i < gt.voxels(); ++i) mask[i] = gt.data[i] > 0.5f ? 1 : 0;
    auto [labels, count] = connected_components(mask, {gt.H(), gt.W(), gt.D()}, cfg.connectivity);
    rec.gt_lesions = count;
    rec.label = count > 0 ? 1 : 0;

    auto cands = extract_candidates(det, cfg.rel_threshold, cfg.min_peak, cfg.connectivity);
    rec.score = patient_score(cands);
    auto match = match_lesions(cands, labels, count, cfg.match_dice);
    rec.candidates = std::move(match.candidates);
    rec.tp = match.true_positives;
    rec.fp = match.false_positives;
    rec.fn = match.false_negatives;
    return rec;
}

struct EvalSummary {
    double auroc = 0.0;
    double ap = 0.0;
    std::vector<EvalRecord> cases;
    std::vector<RocPoint> roc;
    std::vector<PrPoint> pr;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["auroc"] = auroc;
        j["ap"] = ap;
        j["per_case"] = nlohmann::json::array();
        for (const auto& c : cases) {
            nlohmann::json e;
            e["id"] = c.case_id;
            e["label"] = c.label;
            e["score"] = c.score;
            e["gt_lesions"] = c.gt_lesions;
            e["tp"] = c.tp;
            e["fp"] = c.fp;
            e["fn"] = c.fn;
            j["per_case"].push_back(std::move(e));
        }
        j["roc_curve"] = nlohmann::json::array();
        for (const auto& p : roc) {
            j["roc_curve"].push_back(
                {{"threshold", std::isfinite(p.threshold) ? p.threshold : 1e30},
                 {"fpr", p.fpr},
                 {"tpr", p.tpr}});
        }
        j["pr_curve"] = nlohmann::json::array();
        for (const auto& p : pr)
            j["pr_curve"].push_back(
                {{"confidence", p.confidence}, {"recall", p.recall}, {"precision", p.precision}});
        return j;
    }
};

// Aggregates per-case records into patient AUROC and lesion AP with their
// curves. Both patient classes must be present for AUROC; at least one GT
// lesion must exist for AP.
inline EvalSummary summarize(std::vector<EvalRecord> cases) {
    EvalSummary s;
    std::vector<int> labels;
    std::vector<double> scores;
    std::vector<PooledCandidate> pooled;
    int64_t total_gt = 0;
    for (const auto& c : cases) {
        labels.push_back(c.label);
        scores.push_back(c.score);
        total_gt += c.gt_lesions;
        for (const auto& cm : c.candidates) pooled.push_back({cm.confidence, cm.matched_gt >= 0});
    }
    s.auroc = auroc(labels, scores);
    s.ap = average_precision(pooled, total_gt);
    s.roc = roc_curve(labels, scores);
    s.pr = pr_curve(pooled, total_gt);
    s.cases = std::move(cases);
    return s;
}

}  // namespace cswin
