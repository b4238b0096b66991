#include "uadet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadet {

namespace {

double neg_log_clamped(double p) { return -std::log(std::clamp(p, kProbEps, 1.0)); }

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

double smooth_l1(double d) {
    const double a = std::fabs(d);
    return a <= 1.0 ? 0.5 * d * d : a - 0.5;
}

double instance_detection_loss(const std::vector<double>& pred_scores, const Box& pred_box,
                               int label_class, const Box& label_box) {
    if (label_class < 0 || label_class >= static_cast<int>(pred_scores.size()))
        throw std::invalid_argument("instance_detection_loss: class id out of range");

    double loss = neg_log_clamped(pred_scores[static_cast<std::size_t>(label_class)]);
    if (label_class > 0) {
        loss += smooth_l1(pred_box.cx - label_box.cx);
        loss += smooth_l1(pred_box.cy - label_box.cy);
        loss += smooth_l1(pred_box.w - label_box.w);
        loss += smooth_l1(pred_box.h - label_box.h);
    }
    return loss;
}

double weighted_target_detection_loss(const std::vector<MatchedPrediction>& preds,
                                      const std::vector<CandidatePseudoLabel>& pls) {
    if (preds.size() != pls.size())
        throw std::invalid_argument("weighted_target_detection_loss: length mismatch");

    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double w = 1.0 - pls[i].uncertainty.u_norm;
        total += instance_detection_loss(preds[i].scores, preds[i].box, pls[i].class_id,
                                         pls[i].box) * w;
    }
    return total;
}

double target_detection_loss(const std::vector<MatchedPrediction>& preds,
                             const std::vector<CandidatePseudoLabel>& pls) {
    if (preds.size() != pls.size())
        throw std::invalid_argument("target_detection_loss: length mismatch");

    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        total += instance_detection_loss(preds[i].scores, preds[i].box, pls[i].class_id,
                                         pls[i].box);
    return total;
}

double self_training_loss(double det_source, double det_target, double lambda1) {
    return det_source + lambda1 * det_target;
}

double ust_loss(double det_source, double wdet_target, double lambda1) {
    return det_source + lambda1 * wdet_target;
}

double image_alignment_loss(std::span<const double> src_logits, std::span<const double> tgt_logits) {
    const std::size_t n = src_logits.size() + tgt_logits.size();
    if (n == 0) return 0.0;

    double sum = 0.0;
    for (double l : src_logits) sum += neg_log_clamped(logistic(l));
    for (double l : tgt_logits) sum += neg_log_clamped(1.0 - logistic(l));
    return sum / static_cast<double>(n);
}

double instance_alignment_loss(std::span<const double> src_probs, std::span<const double> tgt_probs) {
    double sum = 0.0;
    for (double p : src_probs) sum += neg_log_clamped(p);
    for (double p : tgt_probs) sum += neg_log_clamped(1.0 - p);
    return sum;
}

double consistency_loss(double img_map_mean, std::span<const double> ins_probs) {
    if (ins_probs.empty()) return 0.0;
    double sum = 0.0;
    for (double p : ins_probs) sum += std::fabs(img_map_mean - p);
    return sum / static_cast<double>(ins_probs.size());
}

LossBreakdown combined_objective(double det_source, double det_target, double img_align,
                                 double ins_align, double cst, double lambda1, double lambda2) {
    LossBreakdown b;
    b.det_source = det_source;
    b.det_target = det_target;
    b.img_align = img_align;
    b.ins_align = ins_align;
    b.cst = cst;
    b.lambda1 = lambda1;
    b.lambda2 = lambda2;
    b.total = b.recompute_total();
    return b;
}

} // namespace uadet
