#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "ndi/eval.hpp"

using namespace ndi;
using namespace ndi::testing;

namespace {

// Independent oracle: for every prefix of the score-ranked detections, re-run
// the greedy matching from scratch, collect the (recall, precision) point,
// then integrate the precision envelope over recall.
double ap_oracle(std::vector<RankedDetection> dets, const std::vector<GroundTruth>& gts,
                 double iou_thresh) {
  if (gts.empty() || dets.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const RankedDetection& a, const RankedDetection& b) {
                     return a.score > b.score;
                   });
  const int n = static_cast<int>(dets.size());
  std::vector<double> prec(n);
  std::vector<double> rec(n);
  for (int k = 1; k <= n; ++k) {
    std::vector<char> used(gts.size(), 0);
    int tp = 0;
    for (int i = 0; i < k; ++i) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].image != dets[i].image) continue;
        const double ov = iou(dets[i].box, gts[g].box);
        if (ov >= iou_thresh && ov > best_iou) {
          best_iou = ov;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[best] = 1;
        ++tp;
      }
    }
    prec[k - 1] = static_cast<double>(tp) / k;
    rec[k - 1] = static_cast<double>(tp) / static_cast<double>(gts.size());
  }
  double ap = 0.0;
  double prev = 0.0;
  for (int k = 0; k < n; ++k) {
    double envelope = prec[k];
    for (int j = k + 1; j < n; ++j) envelope = std::max(envelope, prec[j]);
    ap += (rec[k] - prev) * envelope;
    prev = rec[k];
  }
  return ap;
}

Box random_box(Rng& rng) {
  const double x1 = rng.uniform(0.0, 0.7);
  const double y1 = rng.uniform(0.0, 0.7);
  return Box{x1, y1, x1 + rng.uniform(0.08, 0.3), y1 + rng.uniform(0.08, 0.3)};
}

}  // namespace

TEST_CASE("average_precision pinned cases") {
  const Box g{0.1, 0.1, 0.4, 0.4};
  // Perfect detector.
  CHECK(average_precision({{0, g, 0.9}}, {{0, g}}) == doctest::Approx(1.0));
  // No detections.
  CHECK(average_precision({}, {{0, g}}) == 0.0);
  // First detection (score .9) disjoint, second (.8) matches: AP = 0.5.
  const Box miss{0.6, 0.6, 0.9, 0.9};
  CHECK(average_precision({{0, miss, 0.9}, {0, g, 0.8}}, {{0, g}}) == doctest::Approx(0.5));
  // No ground truth but detections present: defined as zero.
  CHECK(average_precision({{0, g, 0.9}}, {}) == 0.0);
}

TEST_CASE("average_precision equals the brute-force prefix oracle exactly") {
  Rng rng(2025);
  for (int round = 0; round < 1000; ++round) {
    const int n_det = 1 + rng.uniform_int(6);
    const int n_gt = 1 + rng.uniform_int(3);
    const int n_img = 1 + rng.uniform_int(2);
    std::vector<RankedDetection> dets;
    std::vector<GroundTruth> gts;
    for (int g = 0; g < n_gt; ++g) gts.push_back({rng.uniform_int(n_img), random_box(rng)});
    for (int d = 0; d < n_det; ++d) {
      // Half the detections sit near a ground truth box.
      if (rng.uniform() < 0.5 && !gts.empty()) {
        const GroundTruth& t = gts[rng.uniform_int(n_gt)];
        Box b = t.box;
        const double dx = rng.uniform(-0.05, 0.05);
        const double dy = rng.uniform(-0.05, 0.05);
        b = Box{std::max(0.0, b.x1 + dx), std::max(0.0, b.y1 + dy),
                std::min(1.0, b.x2 + dx), std::min(1.0, b.y2 + dy)};
        dets.push_back({t.image, b, rng.uniform()});
      } else {
        dets.push_back({rng.uniform_int(n_img), random_box(rng), rng.uniform()});
      }
    }
    const double got = average_precision(dets, gts);
    const double expect = ap_oracle(dets, gts, 0.5);
    CHECK(got == expect);
  }
}

TEST_CASE("average_precision depends only on the score ranking") {
  Rng rng(47);
  std::vector<RankedDetection> dets;
  std::vector<GroundTruth> gts;
  for (int g = 0; g < 3; ++g) gts.push_back({0, random_box(rng)});
  for (int d = 0; d < 6; ++d) {
    Box b = d < 3 ? gts[d].box : random_box(rng);
    dets.push_back({0, b, 0.1 + 0.1 * d});
  }
  const double base = average_precision(dets, gts);
  // Strictly monotone transform of the scores.
  std::vector<RankedDetection> warped = dets;
  for (auto& d : warped) d.score = std::exp(3.0 * d.score) + 1.0;
  CHECK(average_precision(warped, gts) == base);
}

namespace {

/// A model whose refinement head deterministically scores proposal j for
/// class (j % C) using one-hot features.
ModelParams pointer_model(int n, int categories) {
  ModelParams p = init_params(n, categories, 1, 0);
  std::fill(p.w_cls.a.begin(), p.w_cls.a.end(), 0.0);
  std::fill(p.w_det.a.begin(), p.w_det.a.end(), 0.0);
  std::fill(p.w_reg.a.begin(), p.w_reg.a.end(), 0.0);
  std::fill(p.w_ref[0].a.begin(), p.w_ref[0].a.end(), 0.0);
  return p;
}

}  // namespace

TEST_CASE("infer averages heads, suppresses duplicates and drops tiny scores") {
  // Two proposals with identical boxes and one-hot features; the single head
  // scores proposal 0 strongly for class 0 -> NMS keeps one detection.
  ModelParams p = pointer_model(2, 2);
  p.w_ref[0](0, 0) = 8.0;   // feature e0 -> class 0
  p.w_ref[0](1, 2) = 8.0;   // feature e1 -> background
  ProposalSet ps;
  ps.boxes = {Box{0.1, 0.1, 0.4, 0.4}, Box{0.1, 0.1, 0.4, 0.4}};
  ps.features = Mat(2, 2);
  ps.features(0, 0) = 1.0;
  ps.features(1, 1) = 1.0;

  const auto dets = infer(p, ps);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].category == 0);
  CHECK(dets[0].score > 0.99);
  CHECK(iou(dets[0].box, ps.boxes[0]) == doctest::Approx(1.0));

  // K heads that agree exactly: averaging is the identity on their value.
  ModelParams p2 = pointer_model(2, 2);
  p2.heads = 2;
  p2.w_ref.assign(2, p.w_ref[0]);
  p2.b_ref.assign(2, Vec(3, 0.0));
  const auto dets2 = infer(p2, ps);
  REQUIRE(dets2.size() == 1);
  CHECK(dets2[0].score == doctest::Approx(dets[0].score));
}

TEST_CASE("corloc and part_only_rate count top detections per class") {
  // Scene: one object of class 0 whose part box is scored top by the model.
  ModelParams p = pointer_model(2, 1);
  p.w_ref[0](0, 0) = 9.0;  // proposal 0 -> class 0 (the part box)
  p.w_ref[0](1, 1) = 9.0;  // proposal 1 -> background (the full box)

  Example ex;
  SceneObject obj;
  obj.category = 0;
  obj.box = Box{0.2, 0.2, 0.7, 0.7};
  obj.part = Box{0.3, 0.3, 0.45, 0.45};
  ex.scene.objects.push_back(obj);
  ex.scene.labels = {1};
  ex.proposals.boxes = {obj.part, obj.box};
  ex.proposals.features = Mat(2, 2);
  ex.proposals.features(0, 0) = 1.0;
  ex.proposals.features(1, 1) = 1.0;

  const std::vector<Example> split{ex};
  CHECK(part_only_rate(p, split) == doctest::Approx(1.0));
  CHECK(corloc(p, split) == doctest::Approx(0.0));  // part misses the object at 0.5

  // Swap the model preference: full box top -> CorLoc 1, part-only 0.
  ModelParams q = pointer_model(2, 1);
  q.w_ref[0](1, 0) = 9.0;
  q.w_ref[0](0, 1) = 9.0;
  CHECK(part_only_rate(q, split) == doctest::Approx(0.0));
  CHECK(corloc(q, split) == doctest::Approx(1.0));
}

TEST_CASE("mean_average_precision averages only classes with ground truth") {
  // One class present in the split, the other absent; detector hits the GT.
  ModelParams p = pointer_model(2, 2);
  p.w_ref[0](0, 0) = 9.0;
  p.w_ref[0](1, 2) = 9.0;

  Example ex;
  SceneObject obj;
  obj.category = 0;
  obj.box = Box{0.2, 0.2, 0.6, 0.6};
  obj.part = Box{0.3, 0.3, 0.45, 0.45};
  ex.scene.objects.push_back(obj);
  ex.scene.labels = {1, 0};
  ex.proposals.boxes = {obj.box, Box{0.7, 0.7, 0.9, 0.9}};
  ex.proposals.features = Mat(2, 2);
  ex.proposals.features(0, 0) = 1.0;
  ex.proposals.features(1, 1) = 1.0;

  const std::vector<Example> split{ex};
  const std::vector<double> aps = per_class_ap(p, split);
  CHECK(aps[0] == doctest::Approx(1.0));
  CHECK(std::isnan(aps[1]));
  CHECK(mean_average_precision(p, split) == doctest::Approx(1.0));
}
