#pragma once

#include <array>
#include <vector>

#include "ndi/bank.hpp"
#include "ndi/geometry.hpp"
#include "ndi/hyperparams.hpp"
#include "ndi/mat.hpp"

namespace ndi {

/// A high-confidence proposal treated as ground truth for one category.
struct Seed {
  int proposal = 0;
  int category = 0;
  double score = 0.0;
};

enum class NgisMode { kDistance, kSimilarity };

/// Per-proposal supervision for one refinement head. `label` is a category
/// index or `background` (== C); positives carry a regression target.
struct HeadLabels {
  int background = 0;
  std::vector<int> label;
  Vec weight;
  std::vector<char> has_target;
  std::vector<std::array<double, 4>> target;
};

struct PseudoLabels {
  std::vector<HeadLabels> heads;
};

/// Top-fraction non-overlapping selection: per present class, walk the
/// ceil(fraction*N) best-scored proposals in descending order and keep those
/// with IoU < 0.3 against every proposal already kept for that class.
std::vector<Seed> select_candidates(const Mat& scores, const std::vector<Box>& boxes,
                                    const std::vector<int>& labels, double fraction = 0.15);

/// Removes, per image-class group, seeds whose cosine distance to the nearest
/// bank entry of their class exceeds beta times the group mean distance.
/// Groups with an empty queue pass through; a group is never emptied (the
/// closest seed survives). kSimilarity inverts the statistic: seeds whose
/// similarity exceeds beta times the mean similarity are removed.
std::vector<Seed> ngis_filter(const std::vector<Seed>& seeds, const Mat& features,
                              const NDIBank& bank, double beta,
                              NgisMode mode = NgisMode::kDistance);

/// Neighbor assignment: proposals with IoU >= iou_pos against a seed inherit
/// its category and score-weight (highest IoU wins); everything else is
/// background weighted by the image's best seed score.
HeadLabels assign_positives(const std::vector<Seed>& seeds, const std::vector<Box>& boxes,
                            int categories, double iou_pos = 0.5);

/// Center/log-size deltas mapping `proposal` onto `seed`.
std::array<double, 4> regression_targets(const Box& proposal, const Box& seed);

struct PseudoLabelBundle {
  PseudoLabels labels;
  std::vector<std::vector<Seed>> seeds_before;  // per head, pre-NGIS
  std::vector<std::vector<Seed>> seeds_after;   // per head, post-NGIS
};

/// Supervision for all K heads: head 0 is seeded from the MIL scores, head k
/// from head k-1's foreground scores.
PseudoLabelBundle build_pseudo_labels(const Mat& mil_scores, const std::vector<Mat>& refine_scores,
                                      const std::vector<Box>& boxes,
                                      const std::vector<int>& labels, const Mat& features,
                                      const NDIBank& bank, const HyperParams& hp, bool use_ngis,
                                      NgisMode mode = NgisMode::kDistance,
                                      double select_fraction = 0.15);

}  // namespace ndi
