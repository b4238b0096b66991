#pragma once

#include <vector>

#include "uadet/pseudo_label.hpp"

namespace uadet {

// Knobs of the pseudo-label selector: overlap gate tau1, discard threshold tau2,
// Gaussian width sigma, and the output cap k_max.
struct SelectionParams {
    double tau1 = 0.3;
    double tau2 = 0.001;
    double sigma = 0.4;
    int k_max = 20;

    void validate() const;
};

// Gaussian overlap penalty: s * exp(-ov^2 / sigma).
double penalty_soft_nms(double s, double ov, double sigma);

// Uncertainty-attenuated penalty: s * exp(-(ov^2 / sigma) * e^u). Reduces to
// penalty_soft_nms bit-for-bit at u = 0. u must be the normalized uncertainty
// in [0,1]; anything else throws.
double penalty_uncertainty_aware(double s, double ov, double sigma, double u);

// Uncertainty-aware selection. Repeatedly pops the highest-scoring candidate,
// penalizes remaining candidates whose overlap with it is >= tau1, and discards
// those whose score drops below tau2. Returns the top k_max survivors ordered
// by selection score (ties: higher detection score, then lower input index).
std::vector<CandidatePseudoLabel> select_pseudo_labels(const std::vector<CandidatePseudoLabel>& cands,
                                                       const SelectionParams& p);

// Score-threshold baseline: greedy hard NMS at overlap iou_thr on detection
// scores, drop below threshold, keep the top k_max.
std::vector<CandidatePseudoLabel> select_by_score(const std::vector<CandidatePseudoLabel>& cands,
                                                  double threshold, int k_max,
                                                  double iou_thr = 0.3);

} // namespace uadet
