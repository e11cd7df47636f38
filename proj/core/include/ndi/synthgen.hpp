#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndi/geometry.hpp"
#include "ndi/mat.hpp"
#include "ndi/rng.hpp"

namespace ndi {

struct GenConfig {
  int categories = 5;           // C
  int feature_dim = 32;         // D
  int train_scenes = 200;
  int test_scenes = 100;
  int proposals_per_image = 50; // N
  double noise = 0.05;          // stddev of the additive feature noise
  int min_objects = 1;
  int max_objects = 3;
  double part_cos = 0.2;        // pairwise cosine between distinct part signatures
  double body_cos = 0.95;       // pairwise cosine between distinct body signatures
  // Fraction of background proposals whose noise vector carries a random
  // category's part signature. These "distractors" are what the scoring heads
  // confuse across categories, so they are the raw material of negative
  // mining. Rare but pure: frequent distractors would teach even the plain
  // MIL baseline to abandon part features.
  double distractor_rate = 0.05;
  double distractor_min_mix = 0.85;
  double distractor_max_mix = 0.98;
};

/// Throws ConfigError naming the first invalid field.
void validate(const GenConfig& cfg);

struct CategorySignatures {
  int dim = 0;
  std::vector<Vec> part;  // one unit vector per category
  std::vector<Vec> body;  // one unit vector per category

  /// Dimensions reserved for signatures; background noise lives above this.
  int span_dim() const { return 2 * static_cast<int>(part.size()) + 2; }
};

CategorySignatures make_signatures(const GenConfig& cfg);

struct SceneObject {
  int category = 0;  // 0-based
  Box box;           // full object extent
  Box part;          // discriminative sub-region, strictly inside box
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<int> labels;  // multi-hot, length C
};

struct ProposalSet {
  std::vector<Box> boxes;
  Mat features;  // N x D, rows L2-normalized
};

struct Example {
  Scene scene;
  ProposalSet proposals;
};

struct Dataset {
  GenConfig config;
  std::uint64_t seed = 0;
  CategorySignatures signatures;
  std::vector<Example> train;
  std::vector<Example> test;
};

/// Feature of one proposal: coverage-mixed category signatures plus background
/// noise, L2-normalized. `bg_noise` must be unit length.
Vec proposal_feature(const Box& proposal, const Scene& scene, const CategorySignatures& sigs,
                     const Vec& bg_noise, double noise_scale, Rng& rng);

/// Background-noise draw for one proposal (unit length). With probability
/// cfg.distractor_rate it mixes a random category's part signature.
Vec draw_bg_noise(const GenConfig& cfg, const CategorySignatures& sigs, Rng& rng);

/// Deterministic in (config, seed). Guarantees per scene: 1..3 objects, every
/// object has a proposal with IoU >= 0.7 against its box and a part-only
/// proposal (IoU >= 0.5 with the part, < 0.4 with the box); every category
/// appears in at least one training scene.
Dataset generate_dataset(const GenConfig& cfg, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace ndi
