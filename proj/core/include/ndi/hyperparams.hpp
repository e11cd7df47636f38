#pragma once

#include "ndi/errors.hpp"

namespace ndi {

struct HyperParams {
  double tau = 0.05;          // confidence gate for mining, NICE and NCL
  double alpha = 0.3;         // NCL trade-off
  double beta = 3.0;          // NGIS outlier factor
  int queue_len = 5;          // L
  double lr = 0.45;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iters = 8000;
};

inline void validate(const HyperParams& hp) {
  if (!(hp.tau > 0.0 && hp.tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
  if (hp.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (!(hp.beta > 0.0)) throw ConfigError("beta must be > 0");
  if (hp.queue_len < 1) throw ConfigError("queue_len must be >= 1");
  if (hp.iters < 1) throw ConfigError("iters must be >= 1");
}

/// Ablation switches for the auxiliary loss terms.
struct LossFlags {
  bool nice = true;
  bool ncl = true;
};

}  // namespace ndi
