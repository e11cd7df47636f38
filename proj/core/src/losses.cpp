#include "ndi/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ndi/errors.hpp"

namespace ndi {

namespace {

double clamp_unit(double x) { return std::clamp(x, kLogClamp, 1.0 - kLogClamp); }

double smooth_l1(double u) {
  const double a = std::fabs(u);
  return a < 1.0 ? 0.5 * u * u : a - 0.5;
}

}  // namespace

double mil_loss(const Vec& phi, const std::vector<int>& labels) {
  if (phi.size() != labels.size()) throw ContractError("mil_loss: phi/label length mismatch");
  double loss = 0.0;
  for (std::size_t c = 0; c < phi.size(); ++c) {
    const double p = clamp_unit(phi[c]);
    loss -= labels[c] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

Vec mil_loss_grad(const Vec& phi, const std::vector<int>& labels) {
  Vec g(phi.size(), 0.0);
  for (std::size_t c = 0; c < phi.size(); ++c) {
    if (phi[c] < kLogClamp || phi[c] > 1.0 - kLogClamp) continue;  // clamp is flat
    g[c] = labels[c] ? -1.0 / phi[c] : 1.0 / (1.0 - phi[c]);
  }
  return g;
}

RefineLossParts refine_loss_parts(const RefineOutput& refout, const PseudoLabels& pseudo) {
  const int K = static_cast<int>(refout.r.size());
  if (static_cast<int>(pseudo.heads.size()) != K) {
    throw ContractError("refine_loss: head count mismatch");
  }
  RefineLossParts parts;
  for (int k = 0; k < K; ++k) {
    const Mat& R = refout.r[k];
    const HeadLabels& hl = pseudo.heads[k];
    if (static_cast<int>(hl.label.size()) != R.rows) {
      throw ContractError("refine_loss: label length mismatch");
    }
    double head_loss = 0.0;
    for (int j = 0; j < R.rows; ++j) {
      const double p = std::max(R(j, hl.label[j]), kLogClamp);
      head_loss += hl.weight[j] * -std::log(p);
    }
    parts.cls += head_loss / (R.rows * K);
  }

  const HeadLabels& last = pseudo.heads.back();
  int positives = 0;
  for (char t : last.has_target) positives += t ? 1 : 0;
  if (positives > 0) {
    double reg = 0.0;
    for (int j = 0; j < refout.deltas.rows; ++j) {
      if (!last.has_target[j]) continue;
      double e = 0.0;
      for (int m = 0; m < 4; ++m) e += smooth_l1(refout.deltas(j, m) - last.target[j][m]);
      reg += last.weight[j] * e;
    }
    parts.reg = reg / positives;
  }
  return parts;
}

double refine_loss(const RefineOutput& refout, const PseudoLabels& pseudo) {
  return refine_loss_parts(refout, pseudo).total();
}

double nice_loss(const Mat& S, const std::vector<int>& labels, double tau) {
  double loss = 0.0;
  for (int j = 0; j < S.rows; ++j) {
    for (int c = 0; c < S.cols; ++c) {
      if (labels[c] != 0 || S(j, c) <= tau) continue;
      loss -= std::log(1.0 - std::min(S(j, c), 1.0 - kLogClamp));
    }
  }
  return loss;
}

Mat nice_loss_grad(const Mat& S, const std::vector<int>& labels, double tau) {
  Mat g(S.rows, S.cols);
  for (int j = 0; j < S.rows; ++j) {
    for (int c = 0; c < S.cols; ++c) {
      if (labels[c] != 0 || S(j, c) <= tau) continue;
      if (S(j, c) > 1.0 - kLogClamp) continue;
      g(j, c) = 1.0 / (1.0 - S(j, c));
    }
  }
  return g;
}

NclEval ncl_eval(const Mat& features, const Mat& S, const std::vector<int>& labels,
                 const NDIBank& bank, const HyperParams& hp) {
  NclEval eval;
  eval.grad_s = Mat(S.rows, S.cols);
  for (int j = 0; j < S.rows; ++j) {
    int top = -1;
    for (int c = 0; c < S.cols; ++c) {
      if (labels[c] != 0 && (top < 0 || S(j, c) > S(j, top))) top = c;
    }
    if (top < 0 || S(j, top) <= hp.tau) continue;
    Vec f(features.cols);
    for (int d = 0; d < features.cols; ++d) f[d] = features(j, d);
    const auto q = bank.query(top, f);
    if (!q) continue;
    const double sim = std::max(q->similarity, 0.0);
    eval.loss += hp.alpha * q->ns * sim * S(j, top);
    eval.grad_s(j, top) += hp.alpha * q->ns * sim;
  }
  return eval;
}

double ncl_loss(const Mat& features, const Mat& S, const std::vector<int>& labels,
                const NDIBank& bank, const HyperParams& hp) {
  return ncl_eval(features, S, labels, bank, hp).loss;
}

double total_loss(const LossTerms& terms, LossFlags flags) {
  return terms.mil + terms.ref_cls + terms.ref_reg + (flags.nice ? terms.nice : 0.0) +
         (flags.ncl ? terms.ncl : 0.0);
}

LossTerms compute_loss_terms(const ModelParams& params, const Mat& features,
                             const std::vector<int>& labels, const PseudoLabels& pseudo,
                             const NDIBank& bank, const HyperParams& hp) {
  LossTerms terms;
  const MilOutput mil = mil_forward(params, features);
  const RefineOutput ref = refine_forward(params, features);
  terms.mil = mil_loss(mil.phi, labels);
  const RefineLossParts parts = refine_loss_parts(ref, pseudo);
  terms.ref_cls = parts.cls;
  terms.ref_reg = parts.reg;
  terms.nice = nice_loss(mil.S, labels, hp.tau);
  terms.ncl = ncl_loss(features, mil.S, labels, bank, hp);
  return terms;
}

}  // namespace ndi
