#pragma once

#include <utility>
#include <vector>

#include "uadet/geometry.hpp"

namespace uadet {

// T aligned stochastic forward passes for a single proposal: one score vector
// and one decoded box per pass, plus the shared proposal box.
// Invariants: scores and boxes have equal length T >= 1; all score vectors have
// the same length n >= 2, non-negative entries, and sum to 1 within 1e-6.
struct McDetectionSamples {
    std::vector<std::vector<double>> scores; // T x n, softmax outputs
    std::vector<Box> boxes;                  // T decoded boxes
    Box proposal;

    int passes() const { return static_cast<int>(scores.size()); }
    int num_classes() const { return scores.empty() ? 0 : static_cast<int>(scores.front().size()); }

    // Full invariant check (shapes, simplex constraints, box validity).
    // Throws std::invalid_argument with a description of the first violation.
    void validate() const;
};

// Predictive-variance uncertainty split into classification and regression parts.
// u_raw = u_c + u_l always; u_norm is only meaningful after per-image normalization.
struct Uncertainty {
    double u_c = 0.0;
    double u_l = 0.0;
    double u_raw = 0.0;
    double u_norm = 0.0;
};

// Mean score vector and component-wise mean box over the T passes.
std::pair<std::vector<double>, Box> aggregate_mc(const McDetectionSamples& s);

// Biased (1/T) predictive variance of scores and of box coordinates, computed in
// centered two-pass form so that identical passes give exactly zero.
Uncertainty predictive_uncertainty(const McDetectionSamples& s);

// Min-max normalization of u_raw over one image's candidate set. A spread below
// 1e-12 maps everything to 0.
std::vector<Uncertainty> normalize_uncertainties(const std::vector<Uncertainty>& us);

} // namespace uadet
