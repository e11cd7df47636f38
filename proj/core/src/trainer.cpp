#include "ndi/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json_util.hpp"
#include "ndi/errors.hpp"
#include "ndi/eval.hpp"
#include "ndi/rng.hpp"

namespace ndi {

void validate(const TrainConfig& cfg) {
  validate(cfg.hp);
  if (cfg.heads < 1) throw ConfigError("heads must be >= 1");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) {
    throw ConfigError("lr_decay must lie in (0, 1]");
  }
  if (!(cfg.select_fraction > 0.0 && cfg.select_fraction <= 1.0)) {
    throw ConfigError("select_fraction must lie in (0, 1]");
  }
}

void apply_ablation(TrainConfig& cfg, const std::string& variant) {
  if (variant == "baseline") {
    cfg.use_cmu = cfg.use_nice = cfg.use_ncl = cfg.use_ngis = false;
  } else if (variant == "ncl") {
    cfg.use_cmu = cfg.use_nice = cfg.use_ngis = false;
    cfg.use_ncl = true;
  } else if (variant == "ngis") {
    cfg.use_cmu = cfg.use_nice = cfg.use_ncl = false;
    cfg.use_ngis = true;
  } else if (variant == "full" || variant == "cmu_nice") {
    cfg.use_cmu = cfg.use_nice = cfg.use_ncl = cfg.use_ngis = true;
  } else if (variant == "fifo") {
    cfg.use_cmu = cfg.use_nice = false;
    cfg.use_ncl = cfg.use_ngis = true;
  } else if (variant == "cmu") {
    cfg.use_nice = false;
    cfg.use_cmu = cfg.use_ncl = cfg.use_ngis = true;
  } else {
    throw ConfigError("unknown ablation variant: " + variant);
  }
}

void sgd_step(ModelParams& params, const Gradients& grads, double lr, double momentum,
              double weight_decay, Gradients& velocity) {
  auto step_mat = [&](Mat& p, const Mat& g, Mat& v) {
    for (std::size_t i = 0; i < p.a.size(); ++i) {
      v.a[i] = momentum * v.a[i] + g.a[i] + weight_decay * p.a[i];
      p.a[i] -= lr * v.a[i];
    }
  };
  auto step_vec = [&](Vec& p, const Vec& g, Vec& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  };
  step_mat(params.w_cls, grads.w_cls, velocity.w_cls);
  step_vec(params.b_cls, grads.b_cls, velocity.b_cls);
  step_mat(params.w_det, grads.w_det, velocity.w_det);
  step_vec(params.b_det, grads.b_det, velocity.b_det);
  for (int k = 0; k < static_cast<int>(params.w_ref.size()); ++k) {
    step_mat(params.w_ref[k], grads.w_ref[k], velocity.w_ref[k]);
    step_vec(params.b_ref[k], grads.b_ref[k], velocity.b_ref[k]);
  }
  step_mat(params.w_reg, grads.w_reg, velocity.w_reg);
  step_vec(params.b_reg, grads.b_reg, velocity.b_reg);
}

namespace {

void check_finite(double value, const char* term, int iteration) {
  if (!std::isfinite(value)) {
    throw TrainingDiverged(term, iteration,
                           std::string("non-finite loss term '") + term + "' at iteration " +
                               std::to_string(iteration));
  }
}

void dump_seeds(std::ofstream& out, int iteration, int image, const PseudoLabelBundle& bundle) {
  nlohmann::json j{{"iteration", iteration}, {"image", image}};
  auto seeds_json = [](const std::vector<std::vector<Seed>>& per_head) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& seeds : per_head) {
      nlohmann::json arr = nlohmann::json::array();
      for (const Seed& s : seeds) {
        arr.push_back({{"proposal", s.proposal}, {"category", s.category}, {"score", s.score}});
      }
      heads.push_back(std::move(arr));
    }
    return heads;
  };
  j["seeds_before"] = seeds_json(bundle.seeds_before);
  j["seeds_after"] = seeds_json(bundle.seeds_after);
  out << j.dump() << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& dataset) {
  validate(cfg);
  if (dataset.train.empty()) throw ContractError("dataset has no training scenes");
  const auto t0 = std::chrono::steady_clock::now();

  const int C = dataset.config.categories;
  const int D = dataset.config.feature_dim;

  TrainResult result;
  result.params = init_params(D, C, cfg.heads, cfg.seed);
  result.bank = NDIBank(C, cfg.hp.queue_len);
  Gradients velocity = zero_gradients(result.params);
  Rng rng(cfg.seed);

  std::ofstream dump;
  if (!cfg.debug_dump_path.empty()) {
    dump.open(cfg.debug_dump_path);
    if (!dump) throw ContractError("cannot write seed dump: " + cfg.debug_dump_path);
  }

  const LossFlags flags{cfg.use_nice, cfg.use_ncl};
  const int n_train = static_cast<int>(dataset.train.size());
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  result.report.curves.reserve(cfg.hp.iters);
  result.report.total.reserve(cfg.hp.iters);
  result.report.bank_occupancy.reserve(cfg.hp.iters);

  for (int iter = 0; iter < cfg.hp.iters; ++iter) {
    if (iter % n_train == 0) rng.shuffle(order);
    const int image = order[iter % n_train];
    const Example& ex = dataset.train[image];
    const double lr = iter >= cfg.lr_decay_iter ? cfg.hp.lr * cfg.lr_decay : cfg.hp.lr;

    const MilOutput mil = mil_forward(result.params, ex.proposals.features);

    // Collect-then-exploit: the bank absorbs this image's negatives before the
    // same iteration's losses and pseudo-labels read it.
    const std::vector<NegativeInstance> negs =
        mine_negatives(mil.S, ex.scene.labels, ex.proposals.features, cfg.hp.tau);
    result.bank.insert(negs, cfg.use_cmu ? BankUpdate::kCmu : BankUpdate::kFifo);

    const RefineOutput ref = refine_forward(result.params, ex.proposals.features);
    const PseudoLabelBundle pseudo = build_pseudo_labels(
        mil.S, ref.r, ex.proposals.boxes, ex.scene.labels, ex.proposals.features, result.bank,
        cfg.hp, cfg.use_ngis, cfg.ngis_mode, cfg.select_fraction);
    if (dump.is_open()) dump_seeds(dump, iter, image, pseudo);

    LossTerms terms;
    terms.mil = mil_loss(mil.phi, ex.scene.labels);
    const RefineLossParts parts = refine_loss_parts(ref, pseudo.labels);
    terms.ref_cls = parts.cls;
    terms.ref_reg = parts.reg;
    terms.nice = nice_loss(mil.S, ex.scene.labels, cfg.hp.tau);
    terms.ncl = ncl_loss(ex.proposals.features, mil.S, ex.scene.labels, result.bank, cfg.hp);
    check_finite(terms.mil, "mil", iter);
    check_finite(terms.ref_cls, "ref_cls", iter);
    check_finite(terms.ref_reg, "ref_reg", iter);
    check_finite(terms.nice, "nice", iter);
    check_finite(terms.ncl, "ncl", iter);

    const Gradients grads = grad_params(result.params, ex.proposals.features, ex.scene.labels,
                                        pseudo.labels, result.bank, cfg.hp, flags);
    sgd_step(result.params, grads, lr, cfg.hp.momentum, cfg.hp.weight_decay, velocity);

    result.report.curves.push_back(terms);
    result.report.total.push_back(total_loss(terms, flags));
    result.report.bank_occupancy.push_back(result.bank.total_entries());
  }

  result.report.final_map = mean_average_precision(result.params, dataset.test);
  result.report.final_corloc = corloc(result.params, dataset.train);
  result.report.final_part_only = part_only_rate(result.params, dataset.test);
  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void save_report(const TrainReport& report, const std::string& path) {
  auto curve = [&](auto get) {
    nlohmann::json arr = nlohmann::json::array();
    for (const LossTerms& t : report.curves) arr.push_back(get(t));
    return arr;
  };
  nlohmann::json j{
      {"iterations", report.curves.size()},
      {"curves",
       {{"mil", curve([](const LossTerms& t) { return t.mil; })},
        {"ref_cls", curve([](const LossTerms& t) { return t.ref_cls; })},
        {"ref_reg", curve([](const LossTerms& t) { return t.ref_reg; })},
        {"nice", curve([](const LossTerms& t) { return t.nice; })},
        {"ncl", curve([](const LossTerms& t) { return t.ncl; })},
        {"total", report.total}}},
      {"bank_occupancy", report.bank_occupancy},
      {"final", {{"map", report.final_map},
                 {"corloc", report.final_corloc},
                 {"part_only_rate", report.final_part_only}}},
      {"wall_clock_seconds", report.wall_clock_seconds}};
  detail::write_json_file(j, path, "report");
}

void save_metrics_csv(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write metrics: " + path);
  out << "iteration,mil,ref_cls,ref_reg,nice,ncl,total\n";
  char buf[512];
  for (std::size_t i = 0; i < report.curves.size(); ++i) {
    const LossTerms& t = report.curves[i];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, t.mil,
                  t.ref_cls, t.ref_reg, t.nice, t.ncl, report.total[i]);
    out << buf;
  }
}

}  // namespace ndi
