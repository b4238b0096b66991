#include "uadet/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadet {

void SelectionParams::validate() const {
    if (tau1 < 0.0 || tau1 > 1.0) throw std::invalid_argument("selection: tau1 outside [0,1]");
    if (tau2 < 0.0) throw std::invalid_argument("selection: tau2 < 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("selection: sigma <= 0");
    if (k_max < 1) throw std::invalid_argument("selection: k_max < 1");
}

double penalty_soft_nms(double s, double ov, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("penalty: sigma <= 0");
    return s * std::exp(-(ov * ov / sigma));
}

double penalty_uncertainty_aware(double s, double ov, double sigma, double u) {
    if (!(sigma > 0.0)) throw std::invalid_argument("penalty: sigma <= 0");
    if (u < 0.0 || u > 1.0) throw std::invalid_argument("penalty: u outside [0,1]");
    return s * std::exp(-(ov * ov / sigma) * std::exp(u));
}

namespace {

struct WorkItem {
    CandidatePseudoLabel cand;
    int index; // position in the input sequence, for deterministic tie-breaks
};

bool output_order(const WorkItem& a, const WorkItem& b) {
    if (a.cand.selection_score != b.cand.selection_score)
        return a.cand.selection_score > b.cand.selection_score;
    if (a.cand.detection_score != b.cand.detection_score)
        return a.cand.detection_score > b.cand.detection_score;
    return a.index < b.index;
}

} // namespace

std::vector<CandidatePseudoLabel> select_pseudo_labels(const std::vector<CandidatePseudoLabel>& cands,
                                                       const SelectionParams& p) {
    p.validate();

    std::vector<WorkItem> pool;
    pool.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i)
        pool.push_back({cands[i], static_cast<int>(i)});

    std::vector<WorkItem> picked;
    while (!pool.empty()) {
        // argmax over current selection scores, lowest index on ties
        std::size_t m = 0;
        for (std::size_t i = 1; i < pool.size(); ++i)
            if (pool[i].cand.selection_score > pool[m].cand.selection_score) m = i;

        WorkItem top = pool[m];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(m));
        picked.push_back(top);

        for (std::size_t i = 0; i < pool.size();) {
            const double ov = iou(top.cand.box, pool[i].cand.box);
            if (ov >= p.tau1) {
                auto& c = pool[i].cand;
                c.selection_score = penalty_uncertainty_aware(c.selection_score, ov, p.sigma,
                                                              c.uncertainty.u_norm);
                if (c.selection_score < p.tau2) {
                    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
                    continue;
                }
            }
            ++i;
        }
    }

    std::sort(picked.begin(), picked.end(), output_order);
    if (static_cast<int>(picked.size()) > p.k_max) picked.resize(static_cast<std::size_t>(p.k_max));

    std::vector<CandidatePseudoLabel> out;
    out.reserve(picked.size());
    for (auto& w : picked) out.push_back(std::move(w.cand));
    return out;
}

std::vector<CandidatePseudoLabel> select_by_score(const std::vector<CandidatePseudoLabel>& cands,
                                                  double threshold, int k_max, double iou_thr) {
    if (k_max < 1) throw std::invalid_argument("select_by_score: k_max < 1");

    std::vector<int> order(cands.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (cands[a].detection_score != cands[b].detection_score)
            return cands[a].detection_score > cands[b].detection_score;
        return a < b;
    });

    std::vector<CandidatePseudoLabel> kept;
    for (int idx : order) {
        const auto& c = cands[idx];
        bool suppressed = false;
        for (const auto& k : kept) {
            if (iou(k.box, c.box) >= iou_thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(c);
    }

    std::vector<CandidatePseudoLabel> out;
    for (const auto& c : kept)
        if (c.detection_score >= threshold) out.push_back(c);
    if (static_cast<int>(out.size()) > k_max) out.resize(static_cast<std::size_t>(k_max));
    return out;
}

} // namespace uadet
