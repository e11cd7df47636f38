#include "ndi/eval.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "ndi/errors.hpp"

namespace ndi {

std::vector<Detection> infer(const ModelParams& params, const ProposalSet& proposals,
                             double nms_thresh, double score_floor) {
  const RefineOutput ref = refine_forward(params, proposals.features);
  const int N = proposals.features.rows;
  const int C = params.categories;
  const int K = params.heads;

  Mat scores(N, C);
  for (const Mat& r : ref.r) {
    for (int j = 0; j < N; ++j) {
      for (int c = 0; c < C; ++c) scores(j, c) += r(j, c) / K;
    }
  }
  std::vector<Box> refined(N);
  for (int j = 0; j < N; ++j) {
    refined[j] = apply_deltas(proposals.boxes[j],
                              {ref.deltas(j, 0), ref.deltas(j, 1), ref.deltas(j, 2),
                               ref.deltas(j, 3)});
  }

  std::vector<Detection> out;
  std::vector<Box> cls_boxes;
  std::vector<double> cls_scores;
  for (int c = 0; c < C; ++c) {
    cls_boxes.clear();
    cls_scores.clear();
    for (int j = 0; j < N; ++j) {
      if (scores(j, c) < score_floor) continue;
      cls_boxes.push_back(refined[j]);
      cls_scores.push_back(scores(j, c));
    }
    for (int idx : nms(cls_boxes, cls_scores, nms_thresh)) {
      out.push_back(Detection{cls_boxes[idx], c, cls_scores[idx]});
    }
  }
  return out;
}

double average_precision(std::vector<RankedDetection> dets, const std::vector<GroundTruth>& gts,
                         double iou_thresh) {
  const int n_gt = static_cast<int>(gts.size());
  if (n_gt == 0) return 0.0;
  if (dets.empty()) return 0.0;

  std::stable_sort(dets.begin(), dets.end(),
                   [](const RankedDetection& a, const RankedDetection& b) {
                     return a.score > b.score;
                   });

  std::vector<char> matched(gts.size(), 0);
  std::vector<int> tp(dets.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].image != dets[i].image) continue;
      const double ov = iou(dets[i].box, gts[g].box);
      if (ov >= iou_thresh && ov > best_iou) {
        best_iou = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      matched[best] = 1;
      tp[i] = 1;
    }
  }

  // Precision envelope over the cumulative PR points.
  std::vector<double> prec(dets.size());
  std::vector<double> rec(dets.size());
  int cum_tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    cum_tp += tp[i];
    prec[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(cum_tp) / n_gt;
  }
  for (int i = static_cast<int>(dets.size()) - 2; i >= 0; --i) {
    prec[i] = std::max(prec[i], prec[i + 1]);
  }
  double ap = 0.0;
  double prev_rec = 0.0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    ap += (rec[i] - prev_rec) * prec[i];
    prev_rec = rec[i];
  }
  return ap;
}

std::vector<double> per_class_ap(const ModelParams& params, const std::vector<Example>& split,
                                 double iou_thresh) {
  const int C = params.categories;
  std::vector<std::vector<RankedDetection>> dets(C);
  std::vector<std::vector<GroundTruth>> gts(C);
  for (int img = 0; img < static_cast<int>(split.size()); ++img) {
    for (const auto& obj : split[img].scene.objects) {
      gts[obj.category].push_back(GroundTruth{img, obj.box});
    }
    for (const Detection& d : infer(params, split[img].proposals)) {
      dets[d.category].push_back(RankedDetection{img, d.box, d.score});
    }
  }
  std::vector<double> aps(C, std::nan(""));
  for (int c = 0; c < C; ++c) {
    if (gts[c].empty()) continue;
    aps[c] = average_precision(dets[c], gts[c], iou_thresh);
  }
  return aps;
}

double mean_average_precision(const ModelParams& params, const std::vector<Example>& split) {
  const std::vector<double> aps = per_class_ap(params, split);
  double sum = 0.0;
  int n = 0;
  for (double ap : aps) {
    if (std::isnan(ap)) continue;
    sum += ap;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

namespace {

/// Top-scoring detection of class c, or nullptr.
const Detection* top_detection(const std::vector<Detection>& dets, int c) {
  const Detection* best = nullptr;
  for (const Detection& d : dets) {
    if (d.category != c) continue;
    if (best == nullptr || d.score > best->score) best = &d;
  }
  return best;
}

}  // namespace

double corloc(const ModelParams& params, const std::vector<Example>& split) {
  const int C = params.categories;
  std::vector<int> positives(C, 0);
  std::vector<int> hits(C, 0);
  for (const Example& ex : split) {
    const std::vector<Detection> dets = infer(params, ex.proposals);
    for (int c = 0; c < C; ++c) {
      if (!ex.scene.labels[c]) continue;
      ++positives[c];
      const Detection* best = top_detection(dets, c);
      if (best == nullptr) continue;
      for (const auto& obj : ex.scene.objects) {
        if (obj.category == c && iou(best->box, obj.box) >= 0.5) {
          ++hits[c];
          break;
        }
      }
    }
  }
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < C; ++c) {
    if (positives[c] == 0) continue;
    sum += static_cast<double>(hits[c]) / positives[c];
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

double part_only_rate(const ModelParams& params, const std::vector<Example>& split) {
  long long objects = 0;
  long long part_only = 0;
  for (const Example& ex : split) {
    const std::vector<Detection> dets = infer(params, ex.proposals);
    for (const auto& obj : ex.scene.objects) {
      ++objects;
      const Detection* best = top_detection(dets, obj.category);
      if (best == nullptr) continue;
      if (iou(best->box, obj.part) >= 0.5 && iou(best->box, obj.box) < 0.5) ++part_only;
    }
  }
  return objects == 0 ? 0.0 : static_cast<double>(part_only) / static_cast<double>(objects);
}

EvalResult evaluate(const ModelParams& params, const std::vector<Example>& map_split,
                    const std::vector<Example>& corloc_split) {
  EvalResult result;
  result.class_ap = per_class_ap(params, map_split);
  double sum = 0.0;
  int n = 0;
  for (double ap : result.class_ap) {
    if (std::isnan(ap)) continue;
    sum += ap;
    ++n;
  }
  result.map = n == 0 ? 0.0 : sum / n;
  result.corloc = corloc(params, corloc_split);
  result.part_only = part_only_rate(params, map_split);
  for (const Example& ex : map_split) {
    result.detections += static_cast<long long>(infer(params, ex.proposals).size());
  }
  return result;
}

void save_eval(const EvalResult& result, const std::string& path) {
  nlohmann::json aps = nlohmann::json::array();
  for (double ap : result.class_ap) {
    if (std::isnan(ap)) {
      aps.push_back(nullptr);
    } else {
      aps.push_back(ap);
    }
  }
  detail::write_json_file(nlohmann::json{{"per_class_ap", std::move(aps)},
                                         {"map", result.map},
                                         {"corloc", result.corloc},
                                         {"part_only_rate", result.part_only},
                                         {"num_detections", result.detections}},
                          path, "eval");
}

}  // namespace ndi
