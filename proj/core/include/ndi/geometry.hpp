#pragma once

#include <vector>

namespace ndi {

/// Axis-aligned box in a unit-square image plane, corners (x1,y1)-(x2,y2).
/// Valid boxes have strictly positive area and coordinates in [0,1].
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return x1 < x2 && y1 < y2 && x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0;
  }
};

double intersection_area(const Box& a, const Box& b);

/// area(a ∩ b) / area(a ∪ b); symmetric, in [0,1].
double iou(const Box& a, const Box& b);

/// area(inner ∩ outer) / area(inner): the fraction of `inner` covered by `outer`.
double coverage(const Box& inner, const Box& outer);

/// Greedy NMS. Kept indices in descending score order, score ties broken by
/// lower original index; a box is kept iff IoU with every kept box is < iou_thresh.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thresh);

}  // namespace ndi
