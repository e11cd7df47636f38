#pragma once

#include <vector>

#include "ndi/bank.hpp"
#include "ndi/hyperparams.hpp"
#include "ndi/mat.hpp"
#include "ndi/network.hpp"
#include "ndi/pseudolabel.hpp"

namespace ndi {

inline constexpr double kLogClamp = 1e-6;

/// Multi-label BCE on the summed image scores; phi is clamped into
/// [1e-6, 1-1e-6] before the logs.
double mil_loss(const Vec& phi, const std::vector<int>& labels);

/// dL_mil/dphi (zero where the clamp is active).
Vec mil_loss_grad(const Vec& phi, const std::vector<int>& labels);

struct RefineLossParts {
  double cls = 0.0;
  double reg = 0.0;
  double total() const { return cls + reg; }
};

/// Weighted CE averaged over heads and proposals, plus smooth-L1 on the last
/// head's positives (mean over positives; zero when there are none).
RefineLossParts refine_loss_parts(const RefineOutput& refout, const PseudoLabels& pseudo);
double refine_loss(const RefineOutput& refout, const PseudoLabels& pseudo);

/// -sum log(1 - S[j,c]) over every absent-class score above tau.
double nice_loss(const Mat& S, const std::vector<int>& labels, double tau);

/// dL_nice/dS (zero outside the gate and where the clamp is active).
Mat nice_loss_grad(const Mat& S, const std::vector<int>& labels, double tau);

struct NclEval {
  double loss = 0.0;
  Mat grad_s;  // dL_ncl/dS
};

/// Negative contrastive penalty. For each proposal whose best present-class
/// score exceeds tau, the nearest same-class bank entry is looked up and the
/// term ns * max(0, cos) * S[j, c] is added (scaled by alpha). Weighting the
/// similarity by the proposal's own score is what lets the penalty reach the
/// scoring heads: features are fixed inputs here, so a pure similarity sum
/// would have no learnable pathway.
NclEval ncl_eval(const Mat& features, const Mat& S, const std::vector<int>& labels,
                 const NDIBank& bank, const HyperParams& hp);
double ncl_loss(const Mat& features, const Mat& S, const std::vector<int>& labels,
                const NDIBank& bank, const HyperParams& hp);

struct LossTerms {
  double mil = 0.0;
  double ref_cls = 0.0;
  double ref_reg = 0.0;
  double nice = 0.0;
  double ncl = 0.0;
};

/// Exact sum of the enabled terms.
double total_loss(const LossTerms& terms, LossFlags flags = {});

/// All four terms for one image, with the bank and pseudo-labels held fixed.
LossTerms compute_loss_terms(const ModelParams& params, const Mat& features,
                             const std::vector<int>& labels, const PseudoLabels& pseudo,
                             const NDIBank& bank, const HyperParams& hp);

}  // namespace ndi
