#pragma once

#include <vector>

namespace uadet {

// Axis-aligned rectangle in normalized image coordinates, center/size form.
// Invariants: w > 0, h > 0; a clipped box has all corner extents in [0,1]^2.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
    }

    bool degenerate() const { return !(w > 0.0) || !(h > 0.0); }
};

// A labeled box. class_id follows the score-vector convention: 0 is background,
// foreground classes start at 1.
struct Annotation {
    int class_id = 0;
    Box box;
};

// Intersection over union in [0,1]. Symmetric, 0 for disjoint boxes,
// 1 iff the extents coincide. Throws std::invalid_argument for degenerate boxes.
double iou(const Box& a, const Box& b);

// Clip a box to the unit square. Boxes fully inside come back unchanged.
// Throws std::domain_error when clipping would annihilate the box.
Box clip(const Box& b);

} // namespace uadet
