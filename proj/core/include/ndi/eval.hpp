#pragma once

#include <string>
#include <vector>

#include "ndi/geometry.hpp"
#include "ndi/network.hpp"
#include "ndi/synthgen.hpp"

namespace ndi {

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
};

/// Final detections: refined-head scores averaged (background dropped), boxes
/// moved by the regression deltas, per-class NMS at 0.3, scores below 1e-3
/// discarded.
std::vector<Detection> infer(const ModelParams& params, const ProposalSet& proposals,
                             double nms_thresh = 0.3, double score_floor = 1e-3);

struct RankedDetection {
  int image = 0;
  Box box;
  double score = 0.0;
};

struct GroundTruth {
  int image = 0;
  Box box;
};

/// All-points-interpolated AP with greedy score-order matching (IoU >= thresh,
/// each ground truth matchable once, highest-IoU unmatched wins).
double average_precision(std::vector<RankedDetection> dets, const std::vector<GroundTruth>& gts,
                         double iou_thresh = 0.5);

/// Per-class AP over a split; classes without ground truth get NaN.
std::vector<double> per_class_ap(const ModelParams& params, const std::vector<Example>& split,
                                 double iou_thresh = 0.5);

/// Mean of per-class APs over classes with at least one ground-truth box.
double mean_average_precision(const ModelParams& params, const std::vector<Example>& split);

/// Fraction of (image, present class) pairs whose top-scoring detection hits a
/// ground-truth box at IoU >= 0.5, averaged per class then over classes.
double corloc(const ModelParams& params, const std::vector<Example>& split);

/// Fraction of objects whose class's top detection in the image covers the
/// part region (IoU >= 0.5) but not the object (IoU < 0.5).
double part_only_rate(const ModelParams& params, const std::vector<Example>& split);

struct EvalResult {
  std::vector<double> class_ap;  // NaN for classes without ground truth
  double map = 0.0;
  double corloc = 0.0;
  double part_only = 0.0;
  long long detections = 0;
};

/// mAP and part-only rate on `map_split`, CorLoc on `corloc_split`.
EvalResult evaluate(const ModelParams& params, const std::vector<Example>& map_split,
                    const std::vector<Example>& corloc_split);

void save_eval(const EvalResult& result, const std::string& path);

}  // namespace ndi
