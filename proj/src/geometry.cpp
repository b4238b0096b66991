#include "uadet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uadet {

double iou(const Box& a, const Box& b) {
    if (a.degenerate() || b.degenerate())
        throw std::invalid_argument("iou: degenerate box (w or h <= 0)");

    const double ix = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double iy = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (ix <= 0.0 || iy <= 0.0) return 0.0;

    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    double v = inter / uni;
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return v;
}

Box clip(const Box& b) {
    const double x1 = std::clamp(b.x1(), 0.0, 1.0);
    const double y1 = std::clamp(b.y1(), 0.0, 1.0);
    const double x2 = std::clamp(b.x2(), 0.0, 1.0);
    const double y2 = std::clamp(b.y2(), 0.0, 1.0);
    if (!(x2 > x1) || !(y2 > y1))
        throw std::domain_error("clip: box lies outside the unit square");
    return Box::from_corners(x1, y1, x2, y2);
}

} // namespace uadet
