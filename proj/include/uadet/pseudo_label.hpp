#pragma once

#include <optional>
#include <vector>

#include "uadet/geometry.hpp"
#include "uadet/uncertainty.hpp"

namespace uadet {

// A candidate pseudo-label for one proposal. selection_score starts equal to
// detection_score and is only ever attenuated. class_id is a foreground id
// (score index >= 1; index 0 is background).
struct CandidatePseudoLabel {
    Box box;
    int class_id = 1;
    double detection_score = 0.0;
    double selection_score = 0.0;
    Uncertainty uncertainty;
};

// Build a candidate from aggregated MC passes: argmax class over the mean
// scores (ties go to the lowest index), mean box clipped to the unit square.
// Returns nullopt when the argmax lands on background.
std::optional<CandidatePseudoLabel> candidate_from_mc(const McDetectionSamples& s);

// Min-max normalize u_raw across one image's candidates, writing u_norm in place.
void normalize_candidate_uncertainties(std::vector<CandidatePseudoLabel>& cands);

} // namespace uadet
