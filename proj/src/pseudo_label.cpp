#include "uadet/pseudo_label.hpp"

namespace uadet {

std::optional<CandidatePseudoLabel> candidate_from_mc(const McDetectionSamples& s) {
    const auto [mean_scores, mean_box] = aggregate_mc(s);

    int best = 0;
    for (std::size_t i = 1; i < mean_scores.size(); ++i)
        if (mean_scores[i] > mean_scores[best]) best = static_cast<int>(i);

    if (best == 0) return std::nullopt; // background wins, drop the candidate

    CandidatePseudoLabel c;
    c.box = clip(mean_box);
    c.class_id = best;
    c.detection_score = mean_scores[best];
    c.selection_score = c.detection_score;
    c.uncertainty = predictive_uncertainty(s);
    return c;
}

void normalize_candidate_uncertainties(std::vector<CandidatePseudoLabel>& cands) {
    if (cands.empty()) return;
    std::vector<Uncertainty> us;
    us.reserve(cands.size());
    for (const auto& c : cands) us.push_back(c.uncertainty);
    us = normalize_uncertainties(us);
    for (std::size_t i = 0; i < cands.size(); ++i) cands[i].uncertainty = us[i];
}

} // namespace uadet
