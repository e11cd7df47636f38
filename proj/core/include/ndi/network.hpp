#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ndi/bank.hpp"
#include "ndi/geometry.hpp"
#include "ndi/hyperparams.hpp"
#include "ndi/mat.hpp"
#include "ndi/pseudolabel.hpp"

namespace ndi {

/// Two-stream MIL head, K refinement classifiers (C+1 columns, background
/// last) and a class-agnostic box regression head. Features are fixed inputs;
/// these are the only learnable tensors.
struct ModelParams {
  int dim = 0;      // D
  int categories = 0;  // C
  int heads = 0;    // K
  Mat w_cls;        // D x C
  Vec b_cls;
  Mat w_det;        // D x C
  Vec b_det;
  std::vector<Mat> w_ref;  // K of D x (C+1)
  std::vector<Vec> b_ref;
  Mat w_reg;        // D x 4
  Vec b_reg;
};

/// Gaussian init, std 0.01, zero biases.
ModelParams init_params(int dim, int categories, int heads, std::uint64_t seed);

struct MilOutput {
  Mat S;    // N x C, elementwise product of the two stream softmaxes
  Vec phi;  // column sums of S
};

struct RefineOutput {
  std::vector<Mat> r;  // K of N x (C+1), row-stochastic
  Mat deltas;          // N x 4, regression attached to the last head
};

/// S = softmax_over_classes(f·W_cls) ⊙ softmax_over_proposals(f·W_det).
MilOutput mil_forward(const ModelParams& params, const Mat& features);

RefineOutput refine_forward(const ModelParams& params, const Mat& features);

/// Center/log-size box update, clipped to the unit square with a minimum side
/// of 1e-4.
Box apply_deltas(const Box& box, const std::array<double, 4>& deltas);

struct Gradients {
  Mat w_cls;
  Vec b_cls;
  Mat w_det;
  Vec b_det;
  std::vector<Mat> w_ref;
  std::vector<Vec> b_ref;
  Mat w_reg;
  Vec b_reg;
};

Gradients zero_gradients(const ModelParams& params);

/// Analytic d(L_total)/dθ with the pseudo-labels and bank held fixed.
Gradients grad_params(const ModelParams& params, const Mat& features,
                      const std::vector<int>& labels, const PseudoLabels& pseudo,
                      const NDIBank& bank, const HyperParams& hp, LossFlags flags = {});

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace ndi
