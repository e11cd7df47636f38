#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndi/bank.hpp"
#include "ndi/hyperparams.hpp"
#include "ndi/losses.hpp"
#include "ndi/network.hpp"
#include "ndi/pseudolabel.hpp"
#include "ndi/synthgen.hpp"

namespace ndi {

struct TrainConfig {
  HyperParams hp;
  int heads = 3;           // K
  int lr_decay_iter = 6000;  // 3/4 of the default budget
  double lr_decay = 0.1;
  bool use_cmu = true;     // bank update strategy (false -> FIFO)
  bool use_nice = true;
  bool use_ncl = true;
  bool use_ngis = true;
  NgisMode ngis_mode = NgisMode::kDistance;
  double select_fraction = 0.15;
  std::uint64_t seed = 1;
  std::string debug_dump_path;  // per-image seed dumps (JSONL) when non-empty
};

void validate(const TrainConfig& cfg);

/// Maps an ablation name onto the four switches:
///   baseline: all off        ncl:  NCL only (FIFO bank)
///   ngis:     NGIS only      full: all on
///   fifo:     NCL+NGIS, FIFO bank
///   cmu:      NCL+NGIS, CMU bank
///   cmu_nice: NCL+NGIS+NICE, CMU bank (same as full)
void apply_ablation(TrainConfig& cfg, const std::string& variant);

struct TrainReport {
  std::vector<LossTerms> curves;
  Vec total;                     // logged sum of the enabled terms per iteration
  std::vector<int> bank_occupancy;
  double final_map = 0.0;
  double final_corloc = 0.0;
  double final_part_only = 0.0;
  double wall_clock_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  NDIBank bank;
  TrainReport report;
};

/// v <- momentum*v + grads + weight_decay*params; params <- params - lr*v.
void sgd_step(ModelParams& params, const Gradients& grads, double lr, double momentum,
              double weight_decay, Gradients& velocity);

/// One image per iteration in a per-epoch reshuffled order; each step runs
/// MIL forward, negative mining, bank update, pseudo-labeling, the loss
/// gradients and one SGD step. Deterministic in (config, dataset).
TrainResult train(const TrainConfig& cfg, const Dataset& dataset);

void save_report(const TrainReport& report, const std::string& path);
void save_metrics_csv(const TrainReport& report, const std::string& path);

}  // namespace ndi
