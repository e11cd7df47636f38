#include "ndi/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json_util.hpp"
#include "ndi/errors.hpp"
#include "ndi/losses.hpp"
#include "ndi/rng.hpp"

namespace ndi {

namespace {

Mat linear(const Mat& x, const Mat& w, const Vec& b) {
  if (x.cols != w.rows) throw ContractError("feature/weight dimension mismatch");
  Mat out(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < w.cols; ++j) {
      double s = b[j];
      for (int d = 0; d < x.cols; ++d) s += x(i, d) * w(d, j);
      out(i, j) = s;
    }
  }
  return out;
}

// Row softmax with max subtraction.
Mat softmax_rows(const Mat& z) {
  Mat out(z.rows, z.cols);
  for (int i = 0; i < z.rows; ++i) {
    double zmax = z(i, 0);
    for (int j = 1; j < z.cols; ++j) zmax = std::max(zmax, z(i, j));
    double sum = 0.0;
    for (int j = 0; j < z.cols; ++j) {
      out(i, j) = std::exp(z(i, j) - zmax);
      sum += out(i, j);
    }
    for (int j = 0; j < z.cols; ++j) out(i, j) /= sum;
  }
  return out;
}

// Column softmax (over proposals).
Mat softmax_cols(const Mat& z) {
  Mat out(z.rows, z.cols);
  for (int j = 0; j < z.cols; ++j) {
    double zmax = z(0, j);
    for (int i = 1; i < z.rows; ++i) zmax = std::max(zmax, z(i, j));
    double sum = 0.0;
    for (int i = 0; i < z.rows; ++i) {
      out(i, j) = std::exp(z(i, j) - zmax);
      sum += out(i, j);
    }
    for (int i = 0; i < z.rows; ++i) out(i, j) /= sum;
  }
  return out;
}

// dL/dz for p = softmax(z) along rows: dz = p ⊙ (g - <g, p>).
Mat softmax_rows_backward(const Mat& p, const Mat& g) {
  Mat dz(p.rows, p.cols);
  for (int i = 0; i < p.rows; ++i) {
    double dot = 0.0;
    for (int j = 0; j < p.cols; ++j) dot += g(i, j) * p(i, j);
    for (int j = 0; j < p.cols; ++j) dz(i, j) = p(i, j) * (g(i, j) - dot);
  }
  return dz;
}

Mat softmax_cols_backward(const Mat& p, const Mat& g) {
  Mat dz(p.rows, p.cols);
  for (int j = 0; j < p.cols; ++j) {
    double dot = 0.0;
    for (int i = 0; i < p.rows; ++i) dot += g(i, j) * p(i, j);
    for (int i = 0; i < p.rows; ++i) dz(i, j) = p(i, j) * (g(i, j) - dot);
  }
  return dz;
}

// dW = xᵀ·dz, db = column sums of dz, accumulated in place.
void accumulate_linear_grads(const Mat& x, const Mat& dz, Mat& dw, Vec& db) {
  for (int d = 0; d < x.cols; ++d) {
    for (int j = 0; j < dz.cols; ++j) {
      double s = 0.0;
      for (int i = 0; i < x.rows; ++i) s += x(i, d) * dz(i, j);
      dw(d, j) += s;
    }
  }
  for (int j = 0; j < dz.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < dz.rows; ++i) s += dz(i, j);
    db[j] += s;
  }
}

void check_features(const ModelParams& params, const Mat& features) {
  if (features.rows < 1) throw ContractError("forward pass needs at least one proposal");
  if (features.cols != params.dim) {
    throw ContractError("feature dim " + std::to_string(features.cols) +
                        " does not match model dim " + std::to_string(params.dim));
  }
}

}  // namespace

ModelParams init_params(int dim, int categories, int heads, std::uint64_t seed) {
  if (dim < 1 || categories < 1 || heads < 1) {
    throw ConfigError("model dims must be positive (dim, categories, heads)");
  }
  ModelParams p;
  p.dim = dim;
  p.categories = categories;
  p.heads = heads;
  Rng rng(seed);
  auto gauss = [&](Mat& m, int r, int c) {
    m = Mat(r, c);
    for (double& x : m.a) x = rng.normal(0.0, 0.01);
  };
  gauss(p.w_cls, dim, categories);
  p.b_cls.assign(categories, 0.0);
  gauss(p.w_det, dim, categories);
  p.b_det.assign(categories, 0.0);
  p.w_ref.resize(heads);
  p.b_ref.resize(heads);
  for (int k = 0; k < heads; ++k) {
    gauss(p.w_ref[k], dim, categories + 1);
    p.b_ref[k].assign(categories + 1, 0.0);
  }
  gauss(p.w_reg, dim, 4);
  p.b_reg.assign(4, 0.0);
  return p;
}

MilOutput mil_forward(const ModelParams& params, const Mat& features) {
  check_features(params, features);
  const Mat a = softmax_rows(linear(features, params.w_cls, params.b_cls));
  const Mat b = softmax_cols(linear(features, params.w_det, params.b_det));
  MilOutput out;
  out.S = Mat(features.rows, params.categories);
  out.phi.assign(params.categories, 0.0);
  for (int i = 0; i < features.rows; ++i) {
    for (int c = 0; c < params.categories; ++c) {
      out.S(i, c) = a(i, c) * b(i, c);
      out.phi[c] += out.S(i, c);
    }
  }
  return out;
}

RefineOutput refine_forward(const ModelParams& params, const Mat& features) {
  check_features(params, features);
  RefineOutput out;
  out.r.reserve(params.heads);
  for (int k = 0; k < params.heads; ++k) {
    out.r.push_back(softmax_rows(linear(features, params.w_ref[k], params.b_ref[k])));
  }
  out.deltas = linear(features, params.w_reg, params.b_reg);
  return out;
}

Box apply_deltas(const Box& box, const std::array<double, 4>& deltas) {
  constexpr double kMinSide = 1e-4;
  const double w = box.width();
  const double h = box.height();
  const double cx = box.cx() + deltas[0] * w;
  const double cy = box.cy() + deltas[1] * h;
  const double nw = w * std::exp(deltas[2]);
  const double nh = h * std::exp(deltas[3]);

  auto clip_side = [](double lo, double hi) {
    lo = std::clamp(lo, 0.0, 1.0);
    hi = std::clamp(hi, 0.0, 1.0);
    if (hi - lo < kMinSide) {
      hi = std::min(1.0, lo + kMinSide);
      lo = hi - kMinSide;
    }
    return std::pair<double, double>(lo, hi);
  };
  const auto [x1, x2] = clip_side(cx - 0.5 * nw, cx + 0.5 * nw);
  const auto [y1, y2] = clip_side(cy - 0.5 * nh, cy + 0.5 * nh);
  return Box{x1, y1, x2, y2};
}

Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  g.w_cls = Mat(params.w_cls.rows, params.w_cls.cols);
  g.b_cls.assign(params.b_cls.size(), 0.0);
  g.w_det = Mat(params.w_det.rows, params.w_det.cols);
  g.b_det.assign(params.b_det.size(), 0.0);
  g.w_ref.resize(params.heads);
  g.b_ref.resize(params.heads);
  for (int k = 0; k < params.heads; ++k) {
    g.w_ref[k] = Mat(params.w_ref[k].rows, params.w_ref[k].cols);
    g.b_ref[k].assign(params.b_ref[k].size(), 0.0);
  }
  g.w_reg = Mat(params.w_reg.rows, params.w_reg.cols);
  g.b_reg.assign(params.b_reg.size(), 0.0);
  return g;
}

Gradients grad_params(const ModelParams& params, const Mat& features,
                      const std::vector<int>& labels, const PseudoLabels& pseudo,
                      const NDIBank& bank, const HyperParams& hp, LossFlags flags) {
  check_features(params, features);
  const int N = features.rows;
  const int C = params.categories;
  const int K = params.heads;

  Gradients g = zero_gradients(params);

  // MIL streams are recomputed here so the backward pass can reuse the
  // softmax outputs.
  const Mat a = softmax_rows(linear(features, params.w_cls, params.b_cls));
  const Mat b = softmax_cols(linear(features, params.w_det, params.b_det));
  Mat S(N, C);
  Vec phi(C, 0.0);
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < C; ++c) {
      S(i, c) = a(i, c) * b(i, c);
      phi[c] += S(i, c);
    }
  }

  // Upstream dL/dS from the MIL, NICE and NCL terms.
  Mat grad_s(N, C);
  const Vec dphi = mil_loss_grad(phi, labels);
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < C; ++c) grad_s(i, c) = dphi[c];
  }
  if (flags.nice) {
    const Mat gn = nice_loss_grad(S, labels, hp.tau);
    for (std::size_t i = 0; i < grad_s.a.size(); ++i) grad_s.a[i] += gn.a[i];
  }
  if (flags.ncl) {
    const NclEval ncl = ncl_eval(features, S, labels, bank, hp);
    for (std::size_t i = 0; i < grad_s.a.size(); ++i) grad_s.a[i] += ncl.grad_s.a[i];
  }

  // S = a ⊙ b, then back through each stream's softmax.
  Mat ga(N, C);
  Mat gb(N, C);
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < C; ++c) {
      ga(i, c) = grad_s(i, c) * b(i, c);
      gb(i, c) = grad_s(i, c) * a(i, c);
    }
  }
  accumulate_linear_grads(features, softmax_rows_backward(a, ga), g.w_cls, g.b_cls);
  accumulate_linear_grads(features, softmax_cols_backward(b, gb), g.w_det, g.b_det);

  // Refinement heads: weighted CE through a row softmax.
  if (static_cast<int>(pseudo.heads.size()) != K) {
    throw ContractError("grad_params: pseudo-label head count mismatch");
  }
  for (int k = 0; k < K; ++k) {
    const Mat r = softmax_rows(linear(features, params.w_ref[k], params.b_ref[k]));
    const HeadLabels& hl = pseudo.heads[k];
    Mat dz(N, C + 1);
    const double scale = 1.0 / (static_cast<double>(N) * K);
    for (int j = 0; j < N; ++j) {
      const int l = hl.label[j];
      if (hl.weight[j] == 0.0 || r(j, l) < kLogClamp) continue;  // clamped log is flat
      const double wj = hl.weight[j] * scale;
      for (int c = 0; c <= C; ++c) dz(j, c) = wj * (r(j, c) - (c == l ? 1.0 : 0.0));
    }
    accumulate_linear_grads(features, dz, g.w_ref[k], g.b_ref[k]);
  }

  // Regression on the last head's positives.
  const HeadLabels& last = pseudo.heads.back();
  int positives = 0;
  for (char t : last.has_target) positives += t ? 1 : 0;
  if (positives > 0) {
    const Mat deltas = linear(features, params.w_reg, params.b_reg);
    Mat dd(N, 4);
    for (int j = 0; j < N; ++j) {
      if (!last.has_target[j]) continue;
      for (int m = 0; m < 4; ++m) {
        const double u = deltas(j, m) - last.target[j][m];
        const double du = std::fabs(u) < 1.0 ? u : (u > 0.0 ? 1.0 : -1.0);
        dd(j, m) = last.weight[j] * du / positives;
      }
    }
    accumulate_linear_grads(features, dd, g.w_reg, g.b_reg);
  }
  return g;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::string shape_hash(int dim, int categories, int heads) {
  const std::string s = "D=" + std::to_string(dim) + ";C=" + std::to_string(categories) +
                        ";K=" + std::to_string(heads);
  std::uint64_t h = kFnvOffset;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= kFnvPrime;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  nlohmann::json j{{"dim", params.dim},
                   {"categories", params.categories},
                   {"heads", params.heads},
                   {"config_hash", shape_hash(params.dim, params.categories, params.heads)},
                   {"w_cls", detail::mat_to_json(params.w_cls)},
                   {"b_cls", params.b_cls},
                   {"w_det", detail::mat_to_json(params.w_det)},
                   {"b_det", params.b_det},
                   {"w_reg", detail::mat_to_json(params.w_reg)},
                   {"b_reg", params.b_reg}};
  nlohmann::json wr = nlohmann::json::array();
  nlohmann::json br = nlohmann::json::array();
  for (int k = 0; k < params.heads; ++k) {
    wr.push_back(detail::mat_to_json(params.w_ref[k]));
    br.push_back(params.b_ref[k]);
  }
  j["w_ref"] = std::move(wr);
  j["b_ref"] = std::move(br);
  detail::write_json_file(j, path, "checkpoint");
}

ModelParams load_checkpoint(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path, "checkpoint");
  ModelParams p;
  p.dim = j.at("dim").get<int>();
  p.categories = j.at("categories").get<int>();
  p.heads = j.at("heads").get<int>();
  const std::string expect = shape_hash(p.dim, p.categories, p.heads);
  if (j.at("config_hash").get<std::string>() != expect) {
    throw ContractError("checkpoint config_hash does not match its stored shapes");
  }
  p.w_cls = detail::mat_from_json(j.at("w_cls"));
  p.b_cls = j.at("b_cls").get<Vec>();
  p.w_det = detail::mat_from_json(j.at("w_det"));
  p.b_det = j.at("b_det").get<Vec>();
  for (const auto& m : j.at("w_ref")) p.w_ref.push_back(detail::mat_from_json(m));
  for (const auto& v : j.at("b_ref")) p.b_ref.push_back(v.get<Vec>());
  p.w_reg = detail::mat_from_json(j.at("w_reg"));
  p.b_reg = j.at("b_reg").get<Vec>();
  return p;
}

}  // namespace ndi
