#include "ndi/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndi/errors.hpp"

namespace ndi {

std::vector<Seed> select_candidates(const Mat& scores, const std::vector<Box>& boxes,
                                    const std::vector<int>& labels, double fraction) {
  if (scores.rows != static_cast<int>(boxes.size())) {
    throw ContractError("select_candidates: score/box count mismatch");
  }
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("select_fraction must lie in (0, 1]");
  }
  const int N = scores.rows;
  const int budget = static_cast<int>(std::ceil(fraction * N));

  std::vector<Seed> seeds;
  std::vector<int> order(N);
  for (int c = 0; c < scores.cols; ++c) {
    if (labels[c] == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
      if (scores(i, c) != scores(j, c)) return scores(i, c) > scores(j, c);
      return i < j;
    });
    std::vector<int> kept;
    for (int rank = 0; rank < budget && rank < N; ++rank) {
      const int j = order[rank];
      bool overlaps = false;
      for (int k : kept) {
        if (iou(boxes[j], boxes[k]) >= 0.3) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      kept.push_back(j);
      seeds.push_back(Seed{j, c, scores(j, c)});
    }
  }
  return seeds;
}

std::vector<Seed> ngis_filter(const std::vector<Seed>& seeds, const Mat& features,
                              const NDIBank& bank, double beta, NgisMode mode) {
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  std::vector<Seed> out;
  for (int c = 0; c < bank.categories(); ++c) {
    std::vector<int> group;
    for (int i = 0; i < static_cast<int>(seeds.size()); ++i) {
      if (seeds[i].category == c) group.push_back(i);
    }
    if (group.empty()) continue;
    if (bank.queue(c).empty()) {
      for (int i : group) out.push_back(seeds[i]);
      continue;
    }
    // Statistic per seed: cosine distance to the nearest same-class entry
    // (kSimilarity uses the raw similarity instead).
    std::vector<double> stat(group.size());
    for (std::size_t g = 0; g < group.size(); ++g) {
      const Seed& s = seeds[group[g]];
      Vec f(features.cols);
      for (int d = 0; d < features.cols; ++d) f[d] = features(s.proposal, d);
      const double sim = bank.query(c, f)->similarity;
      stat[g] = mode == NgisMode::kDistance ? 1.0 - sim : sim;
    }
    const double mean = std::accumulate(stat.begin(), stat.end(), 0.0) / stat.size();
    std::vector<int> survivors;
    for (std::size_t g = 0; g < group.size(); ++g) {
      if (!(stat[g] > beta * mean)) survivors.push_back(group[g]);
    }
    if (survivors.empty()) {
      // Never empty a group: keep the seed with the best statistic.
      std::size_t best = 0;
      for (std::size_t g = 1; g < group.size(); ++g) {
        if (stat[g] < stat[best]) best = g;
      }
      survivors.push_back(group[best]);
    }
    for (int i : survivors) out.push_back(seeds[i]);
  }
  return out;
}

std::array<double, 4> regression_targets(const Box& proposal, const Box& seed) {
  return {(seed.cx() - proposal.cx()) / proposal.width(),
          (seed.cy() - proposal.cy()) / proposal.height(),
          std::log(seed.width() / proposal.width()),
          std::log(seed.height() / proposal.height())};
}

HeadLabels assign_positives(const std::vector<Seed>& seeds, const std::vector<Box>& boxes,
                            int categories, double iou_pos) {
  const int N = static_cast<int>(boxes.size());
  HeadLabels hl;
  hl.background = categories;
  hl.label.assign(N, categories);
  hl.weight.assign(N, 0.0);
  hl.has_target.assign(N, 0);
  hl.target.assign(N, {0.0, 0.0, 0.0, 0.0});
  if (seeds.empty()) return hl;

  double top_seed_score = 0.0;
  for (const Seed& s : seeds) top_seed_score = std::max(top_seed_score, s.score);

  for (int j = 0; j < N; ++j) {
    int best = -1;
    double best_iou = 0.0;
    for (int s = 0; s < static_cast<int>(seeds.size()); ++s) {
      const double ov = iou(boxes[j], boxes[seeds[s].proposal]);
      if (ov > best_iou || (ov == best_iou && best >= 0 && seeds[s].score > seeds[best].score)) {
        best_iou = ov;
        best = s;
      }
    }
    if (best >= 0 && best_iou >= iou_pos) {
      hl.label[j] = seeds[best].category;
      hl.weight[j] = seeds[best].score;
      hl.has_target[j] = 1;
      hl.target[j] = regression_targets(boxes[j], boxes[seeds[best].proposal]);
    } else {
      hl.weight[j] = top_seed_score;
    }
  }
  return hl;
}

PseudoLabelBundle build_pseudo_labels(const Mat& mil_scores, const std::vector<Mat>& refine_scores,
                                      const std::vector<Box>& boxes,
                                      const std::vector<int>& labels, const Mat& features,
                                      const NDIBank& bank, const HyperParams& hp, bool use_ngis,
                                      NgisMode mode, double select_fraction) {
  const int K = static_cast<int>(refine_scores.size());
  const int C = static_cast<int>(labels.size());
  PseudoLabelBundle bundle;
  for (int k = 0; k < K; ++k) {
    // Head k is supervised by head k-1's foreground scores; head 0 by the MIL
    // scores. The last head's own output feeds inference only.
    const Mat* sup = &mil_scores;
    Mat fg;
    if (k > 0) {
      const Mat& r = refine_scores[k - 1];
      fg = Mat(r.rows, C);
      for (int i = 0; i < r.rows; ++i) {
        for (int c = 0; c < C; ++c) fg(i, c) = r(i, c);
      }
      sup = &fg;
    }
    std::vector<Seed> seeds = select_candidates(*sup, boxes, labels, select_fraction);
    bundle.seeds_before.push_back(seeds);
    if (use_ngis) seeds = ngis_filter(seeds, features, bank, hp.beta, mode);
    bundle.seeds_after.push_back(seeds);
    bundle.labels.heads.push_back(assign_positives(seeds, boxes, C));
  }
  return bundle;
}

}  // namespace ndi
