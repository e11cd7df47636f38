#pragma once

// Shared fixtures for the unit and acceptance suites: random well-conditioned
// model instances and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ndi/bank.hpp"
#include "ndi/losses.hpp"
#include "ndi/network.hpp"
#include "ndi/pseudolabel.hpp"
#include "ndi/rng.hpp"

namespace ndi::testing {

inline Vec random_unit(int dim, Rng& rng) {
  Vec v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (double& x : v) x /= n;
  return v;
}

inline Mat random_unit_rows(int rows, int dim, Rng& rng) {
  Mat m(rows, dim);
  for (int i = 0; i < rows; ++i) {
    const Vec v = random_unit(dim, rng);
    for (int d = 0; d < dim; ++d) m(i, d) = v[d];
  }
  return m;
}

/// A random loss-evaluation instance: params, features, labels, a part-filled
/// bank and pseudo-labels with regression targets.
struct Instance {
  ModelParams params;
  Mat features;
  std::vector<int> labels;
  NDIBank bank;
  PseudoLabels pseudo;
  HyperParams hp;
};

inline PseudoLabels random_pseudo(int n, int categories, int heads, Rng& rng) {
  PseudoLabels pseudo;
  for (int k = 0; k < heads; ++k) {
    HeadLabels hl;
    hl.background = categories;
    for (int j = 0; j < n; ++j) {
      const bool fg = rng.uniform() < 0.6;
      hl.label.push_back(fg ? rng.uniform_int(categories) : categories);
      hl.weight.push_back(rng.uniform(0.1, 1.0));
      hl.has_target.push_back(fg ? 1 : 0);
      hl.target.push_back({rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                           rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)});
    }
    pseudo.heads.push_back(std::move(hl));
  }
  return pseudo;
}

inline Instance random_instance(Rng& rng, bool fill_bank = true) {
  Instance inst;
  const int n = 1 + rng.uniform_int(5);          // N <= 5
  const int categories = 2 + rng.uniform_int(2); // C in {2,3}
  const int dim = 4 + rng.uniform_int(5);        // D in [4,8]
  const int heads = 1 + rng.uniform_int(2);      // K in {1,2}

  inst.params = init_params(dim, categories, heads, rng.next_u64());
  // Larger weights than the training init so the softmaxes are informative.
  auto scale = [&](Mat& m) {
    for (double& x : m.a) x = rng.normal(0.0, 1.2);
  };
  scale(inst.params.w_cls);
  scale(inst.params.w_det);
  for (auto& w : inst.params.w_ref) scale(w);
  scale(inst.params.w_reg);

  inst.features = random_unit_rows(n, dim, rng);
  inst.labels.assign(categories, 0);
  inst.labels[rng.uniform_int(categories)] = 1;
  for (int c = 0; c < categories; ++c) {
    if (rng.uniform() < 0.4) inst.labels[c] = 1;
  }
  if (rng.uniform() < 0.35) inst.labels[rng.uniform_int(categories)] = 0;

  inst.hp.tau = 0.05;
  inst.hp.alpha = 0.3;
  inst.bank = NDIBank(categories, 3);
  if (fill_bank) {
    std::vector<NegativeInstance> negs;
    for (int c = 0; c < categories; ++c) {
      const int count = rng.uniform_int(4);  // 0..3 entries per queue
      for (int i = 0; i < count; ++i) {
        NegativeInstance neg;
        neg.neg_class = c;
        neg.confidence = rng.uniform(0.1, 1.0);
        neg.feature = random_unit(dim, rng);
        negs.push_back(std::move(neg));
      }
    }
    inst.bank.insert(negs);
  }
  inst.pseudo = random_pseudo(n, categories, heads, rng);
  return inst;
}

/// Gate margins wide enough that a +-1e-5 parameter nudge cannot flip any
/// indicator, argmax or clamp inside the losses.
inline bool margins_ok(const Instance& inst) {
  const MilOutput mil = mil_forward(inst.params, inst.features);
  const RefineOutput ref = refine_forward(inst.params, inst.features);
  constexpr double kMargin = 1e-3;
  for (double p : mil.phi) {
    if (p < 1e-3 || p > 1.0 - 1e-3) return false;
  }
  for (int j = 0; j < mil.S.rows; ++j) {
    double top1 = -1.0;
    double top2 = -1.0;
    for (int c = 0; c < mil.S.cols; ++c) {
      if (std::fabs(mil.S(j, c) - inst.hp.tau) < kMargin) return false;
      if (mil.S(j, c) > 1.0 - 1e-3) return false;
      if (inst.labels[c]) {
        if (mil.S(j, c) > top1) {
          top2 = top1;
          top1 = mil.S(j, c);
        } else if (mil.S(j, c) > top2) {
          top2 = mil.S(j, c);
        }
      }
    }
    if (top2 >= 0.0 && top1 - top2 < kMargin) return false;
    // Nearest-entry ties in the per-class queues must be decisive.
    int top_present = -1;
    for (int c = 0; c < mil.S.cols; ++c) {
      if (inst.labels[c] && (top_present < 0 || mil.S(j, c) > mil.S(j, top_present))) {
        top_present = c;
      }
    }
    if (top_present >= 0 && mil.S(j, top_present) > inst.hp.tau) {
      const auto& q = inst.bank.queue(top_present);
      if (q.size() > 1) {
        Vec f(inst.features.cols);
        for (int d = 0; d < inst.features.cols; ++d) f[d] = inst.features(j, d);
        std::vector<double> sims;
        for (const auto& e : q) {
          double s = 0.0;
          for (int d = 0; d < inst.features.cols; ++d) s += e.nf[d] * f[d];
          sims.push_back(s);
        }
        std::sort(sims.begin(), sims.end(), std::greater<>());
        if (sims[0] - sims[1] < kMargin) return false;
        if (std::fabs(sims[0]) < kMargin) return false;  // relu kink in the similarity
      }
    }
  }
  for (int k = 0; k < static_cast<int>(ref.r.size()); ++k) {
    for (int j = 0; j < ref.r[k].rows; ++j) {
      if (ref.r[k](j, inst.pseudo.heads[k].label[j]) < 1e-5) return false;
    }
  }
  const HeadLabels& last = inst.pseudo.heads.back();
  for (int j = 0; j < ref.deltas.rows; ++j) {
    if (!last.has_target[j]) continue;
    for (int m = 0; m < 4; ++m) {
      const double u = ref.deltas(j, m) - last.target[j][m];
      if (std::fabs(std::fabs(u) - 1.0) < kMargin) return false;  // smooth-L1 kink
    }
  }
  return true;
}

inline Instance well_conditioned_instance(Rng& rng, bool fill_bank = true) {
  for (int tries = 0; tries < 200; ++tries) {
    Instance inst = random_instance(rng, fill_bank);
    if (margins_ok(inst)) return inst;
  }
  throw std::runtime_error("could not draw a margin-safe instance");
}

inline std::vector<double*> parameter_view(ModelParams& p) {
  std::vector<double*> out;
  auto add_mat = [&](Mat& m) {
    for (double& x : m.a) out.push_back(&x);
  };
  auto add_vec = [&](Vec& v) {
    for (double& x : v) out.push_back(&x);
  };
  add_mat(p.w_cls);
  add_vec(p.b_cls);
  add_mat(p.w_det);
  add_vec(p.b_det);
  for (int k = 0; k < p.heads; ++k) {
    add_mat(p.w_ref[k]);
    add_vec(p.b_ref[k]);
  }
  add_mat(p.w_reg);
  add_vec(p.b_reg);
  return out;
}

inline std::vector<double> gradient_view(const Gradients& g) {
  std::vector<double> out;
  auto add_mat = [&](const Mat& m) { out.insert(out.end(), m.a.begin(), m.a.end()); };
  auto add_vec = [&](const Vec& v) { out.insert(out.end(), v.begin(), v.end()); };
  add_mat(g.w_cls);
  add_vec(g.b_cls);
  add_mat(g.w_det);
  add_vec(g.b_det);
  for (int k = 0; k < static_cast<int>(g.w_ref.size()); ++k) {
    add_mat(g.w_ref[k]);
    add_vec(g.b_ref[k]);
  }
  add_mat(g.w_reg);
  add_vec(g.b_reg);
  return out;
}

/// Max relative error between an analytic gradient and central differences of
/// `loss` (h = 1e-5), with a 1e-2 floor in the denominator.
inline double max_fd_error(Instance& inst, const std::function<double()>& loss,
                           const std::vector<double>& analytic, double h = 1e-5) {
  const std::vector<double*> view = parameter_view(inst.params);
  double worst = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const double saved = *view[i];
    *view[i] = saved + h;
    const double up = loss();
    *view[i] = saved - h;
    const double down = loss();
    *view[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-2});
    worst = std::max(worst, std::fabs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace ndi::testing
