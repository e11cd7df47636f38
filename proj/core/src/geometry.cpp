#include "ndi/geometry.hpp"

#include <algorithm>
#include <numeric>

#include "ndi/errors.hpp"

namespace ndi {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double coverage(const Box& inner, const Box& outer) {
  return intersection_area(inner, outer) / inner.area();
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_thresh) {
  if (boxes.size() != scores.size()) {
    throw ContractError("nms: boxes and scores differ in length");
  }
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });

  std::vector<int> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (int k : kept) {
      if (iou(boxes[idx], boxes[k]) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace ndi
