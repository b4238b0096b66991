#include "uadet/uncertainty.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uadet {

namespace {

void check_aligned(const McDetectionSamples& s) {
    if (s.scores.empty())
        throw std::invalid_argument("mc samples: empty (T = 0)");
    if (s.scores.size() != s.boxes.size())
        throw std::invalid_argument("mc samples: scores/boxes length mismatch");
    const std::size_t n = s.scores.front().size();
    if (n < 2)
        throw std::invalid_argument("mc samples: need at least 2 classes");
    for (const auto& g : s.scores)
        if (g.size() != n)
            throw std::invalid_argument("mc samples: ragged score vectors");
}

std::vector<double> box_as_vec(const Box& b) { return {b.cx, b.cy, b.w, b.h}; }

// Running mean with the incremental update. For bit-identical inputs the
// residual term is exactly zero at every step, so the mean stays bit-identical
// to the inputs; plain sum-then-divide does not guarantee that.
void welford_mean(std::vector<double>& mean, const std::vector<double>& x, int t) {
    for (std::size_t i = 0; i < mean.size(); ++i)
        mean[i] += (x[i] - mean[i]) / static_cast<double>(t);
}

} // namespace

void McDetectionSamples::validate() const {
    check_aligned(*this);
    for (std::size_t t = 0; t < scores.size(); ++t) {
        double sum = 0.0;
        for (double g : scores[t]) {
            if (!(g >= 0.0))
                throw std::invalid_argument("mc samples: negative score in pass " + std::to_string(t));
            sum += g;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("mc samples: scores of pass " + std::to_string(t) +
                                        " sum to " + std::to_string(sum));
        if (boxes[t].degenerate())
            throw std::invalid_argument("mc samples: degenerate box in pass " + std::to_string(t));
    }
}

std::pair<std::vector<double>, Box> aggregate_mc(const McDetectionSamples& s) {
    check_aligned(s);
    const int T = s.passes();

    std::vector<double> mean_scores(s.scores.front().size(), 0.0);
    std::vector<double> mean_box(4, 0.0);
    for (int t = 0; t < T; ++t) {
        welford_mean(mean_scores, s.scores[t], t + 1);
        welford_mean(mean_box, box_as_vec(s.boxes[t]), t + 1);
    }
    return {mean_scores, Box{mean_box[0], mean_box[1], mean_box[2], mean_box[3]}};
}

Uncertainty predictive_uncertainty(const McDetectionSamples& s) {
    check_aligned(s);
    const int T = s.passes();
    const auto [mean_scores, mean_box] = aggregate_mc(s);
    const std::vector<double> mean_box_v = box_as_vec(mean_box);

    double u_c = 0.0;
    double u_l = 0.0;
    for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < mean_scores.size(); ++i) {
            const double d = s.scores[t][i] - mean_scores[i];
            u_c += d * d;
        }
        const std::vector<double> bv = box_as_vec(s.boxes[t]);
        for (int i = 0; i < 4; ++i) {
            const double d = bv[i] - mean_box_v[i];
            u_l += d * d;
        }
    }
    u_c /= static_cast<double>(T);
    u_l /= static_cast<double>(T);
    if (u_c < 0.0) u_c = 0.0;
    if (u_l < 0.0) u_l = 0.0;

    Uncertainty u;
    u.u_c = u_c;
    u.u_l = u_l;
    u.u_raw = u_c + u_l;
    u.u_norm = 0.0;
    return u;
}

std::vector<Uncertainty> normalize_uncertainties(const std::vector<Uncertainty>& us) {
    if (us.empty())
        throw std::invalid_argument("normalize_uncertainties: empty input");

    double lo = us.front().u_raw;
    double hi = us.front().u_raw;
    for (const auto& u : us) {
        lo = std::min(lo, u.u_raw);
        hi = std::max(hi, u.u_raw);
    }

    std::vector<Uncertainty> out = us;
    const double range = hi - lo;
    for (auto& u : out)
        u.u_norm = (range < 1e-12) ? 0.0 : (u.u_raw - lo) / range;
    return out;
}

} // namespace uadet
