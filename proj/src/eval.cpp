#include "uadet/eval.hpp"

#include <algorithm>
#include <set>

namespace uadet {

std::vector<std::pair<double, bool>> match_detections(std::vector<Detection> preds,
                                                      const std::vector<Box>& gts,
                                                      double iou_thr) {
    std::stable_sort(preds.begin(), preds.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });

    std::vector<bool> taken(gts.size(), false);
    std::vector<std::pair<double, bool>> out;
    out.reserve(preds.size());

    for (const auto& p : preds) {
        double best_iou = 0.0;
        int best = -1;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j]) continue;
            const double ov = iou(p.box, gts[j]);
            if (ov > best_iou) {
                best_iou = ov;
                best = static_cast<int>(j);
            }
        }
        const bool tp = best >= 0 && best_iou >= iou_thr;
        if (tp) taken[static_cast<std::size_t>(best)] = true;
        out.emplace_back(p.score, tp);
    }
    return out;
}

double average_precision(std::vector<std::pair<double, bool>> scored_matches, int n_gt) {
    if (n_gt <= 0) return 0.0;
    if (scored_matches.empty()) return 0.0;

    std::stable_sort(scored_matches.begin(), scored_matches.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t n = scored_matches.size();
    std::vector<double> precision(n), recall(n);
    int tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (scored_matches[i].second) ++tp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }

    // precision envelope: max precision at any recall >= r
    for (std::size_t i = n - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);

    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& preds_per_image,
                               const std::vector<std::vector<Annotation>>& gts_per_image,
                               double iou_thr) {
    std::set<int> classes;
    for (const auto& gts : gts_per_image)
        for (const auto& g : gts) classes.insert(g.class_id);
    for (const auto& preds : preds_per_image)
        for (const auto& p : preds) classes.insert(p.class_id);

    EvalResult result;
    double ap_sum = 0.0;
    int ap_classes = 0;

    for (int c : classes) {
        std::vector<std::pair<double, bool>> matches;
        int n_gt = 0;
        for (std::size_t img = 0; img < preds_per_image.size(); ++img) {
            std::vector<Detection> preds;
            for (const auto& p : preds_per_image[img])
                if (p.class_id == c) preds.push_back(p);

            std::vector<Box> gts;
            if (img < gts_per_image.size())
                for (const auto& g : gts_per_image[img])
                    if (g.class_id == c) gts.push_back(g.box);

            n_gt += static_cast<int>(gts.size());
            auto m = match_detections(std::move(preds), gts, iou_thr);
            matches.insert(matches.end(), m.begin(), m.end());
        }

        ClassCounts counts;
        for (const auto& [score, tp] : matches)
            (tp ? counts.tp : counts.fp)++;
        counts.fn = n_gt - counts.tp;
        result.counts[c] = counts;

        const double ap = average_precision(matches, n_gt);
        result.per_class_ap[c] = ap;
        if (n_gt > 0) {
            ap_sum += ap;
            ++ap_classes;
        }
    }

    result.map = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
    return result;
}

} // namespace uadet
