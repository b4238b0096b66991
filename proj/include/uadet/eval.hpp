#pragma once

#include <map>
#include <vector>

#include "uadet/geometry.hpp"

namespace uadet {

struct Detection {
    int class_id = 1;
    double score = 0.0;
    Box box;
};

struct ClassCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

struct EvalResult {
    std::map<int, double> per_class_ap;
    std::map<int, ClassCounts> counts;
    double map = 0.0; // mean AP over classes present in the ground truth
};

// Greedy matching for one image and one class. Predictions are processed in
// descending score order; each one takes the highest-IoU unmatched ground
// truth with IoU >= iou_thr. Returns (score, is_tp) per prediction.
std::vector<std::pair<double, bool>> match_detections(std::vector<Detection> preds,
                                                      const std::vector<Box>& gts,
                                                      double iou_thr);

// Area under the precision/recall curve with the precision envelope
// (all-points interpolation). n_gt = 0 gives 0 whenever predictions exist.
double average_precision(std::vector<std::pair<double, bool>> scored_matches, int n_gt);

// Per-class AP and mAP at the given IoU threshold over a set of images.
// Classes without any ground truth are excluded from the mean.
EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& preds_per_image,
                               const std::vector<std::vector<Annotation>>& gts_per_image,
                               double iou_thr = 0.5);

} // namespace uadet
