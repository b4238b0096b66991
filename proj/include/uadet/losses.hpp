#pragma once

#include <span>
#include <vector>

#include "uadet/geometry.hpp"
#include "uadet/pseudo_label.hpp"

namespace uadet {

// Probabilities are clamped to [kProbEps, 1] before any log.
inline constexpr double kProbEps = 1e-7;

// Named loss components of one source/target training pair. The stored total
// always equals det_source + lambda1*det_target + lambda2*(img+ins+cst).
struct LossBreakdown {
    double det_source = 0.0;
    double det_target = 0.0;
    double img_align = 0.0;
    double ins_align = 0.0;
    double cst = 0.0;
    double lambda1 = 0.001;
    double lambda2 = 0.1;
    double total = 0.0;

    double recompute_total() const {
        return det_source + lambda1 * det_target + lambda2 * (img_align + ins_align + cst);
    }
};

// One prediction already matched to a pseudo-label: its score vector and box.
struct MatchedPrediction {
    std::vector<double> scores;
    Box box;
};

// Smooth L1 with transition point 1, applied per coordinate.
double smooth_l1(double d);

// Cross-entropy on the labeled class plus smooth L1 between the boxes.
// The regression term only contributes for foreground labels (class >= 1).
double instance_detection_loss(const std::vector<double>& pred_scores, const Box& pred_box,
                               int label_class, const Box& label_box);

// Sum of per-instance losses over matched pairs, each weighted by one minus
// the pseudo-label's normalized uncertainty.
double weighted_target_detection_loss(const std::vector<MatchedPrediction>& preds,
                                      const std::vector<CandidatePseudoLabel>& pls);

// Unweighted variant (every pair at weight one).
double target_detection_loss(const std::vector<MatchedPrediction>& preds,
                             const std::vector<CandidatePseudoLabel>& pls);

double self_training_loss(double det_source, double det_target, double lambda1);
double ust_loss(double det_source, double wdet_target, double lambda1);

// Per-position binary cross-entropy on the image-level domain logits, source
// map against label 1 and target map against label 0, averaged over all
// positions of both maps.
double image_alignment_loss(std::span<const double> src_logits, std::span<const double> tgt_logits);

// -sum log D(src) - sum log(1 - D(tgt)) over instance-level domain
// probabilities. An empty target side leaves only the source term.
double instance_alignment_loss(std::span<const double> src_probs, std::span<const double> tgt_probs);

// Mean absolute gap between the image-map mean probability and each instance
// probability. Empty instance set gives 0.
double consistency_loss(double img_map_mean, std::span<const double> ins_probs);

LossBreakdown combined_objective(double det_source, double det_target, double img_align,
                                 double ins_align, double cst, double lambda1, double lambda2);

} // namespace uadet
