#include "ndi/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json_util.hpp"
#include "ndi/errors.hpp"

namespace ndi {

namespace {

void l2_normalize(Vec& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n == 0.0) throw ContractError("cannot normalize a zero feature vector");
  for (double& x : v) x /= n;
}

Box jitter_box(const Box& b, double scale, Rng& rng) {
  const double w = b.width();
  const double h = b.height();
  auto clamp01 = [](double x) { return std::min(1.0, std::max(0.0, x)); };
  Box out;
  out.x1 = clamp01(b.x1 + rng.uniform(-scale, scale) * w);
  out.y1 = clamp01(b.y1 + rng.uniform(-scale, scale) * h);
  out.x2 = clamp01(b.x2 + rng.uniform(-scale, scale) * w);
  out.y2 = clamp01(b.y2 + rng.uniform(-scale, scale) * h);
  if (out.x2 - out.x1 < 1e-3) out.x2 = clamp01(out.x1 + 1e-3);
  if (out.y2 - out.y1 < 1e-3) out.y2 = clamp01(out.y1 + 1e-3);
  return out;
}

Box lerp_box(const Box& a, const Box& b, double t) {
  return Box{a.x1 + t * (b.x1 - a.x1), a.y1 + t * (b.y1 - a.y1), a.x2 + t * (b.x2 - a.x2),
             a.y2 + t * (b.y2 - a.y2)};
}

SceneObject make_object(int category, Rng& rng) {
  SceneObject obj;
  obj.category = category;
  const double w = rng.uniform(0.25, 0.5);
  const double h = rng.uniform(0.25, 0.5);
  const double x1 = rng.uniform(0.01, 0.99 - w);
  const double y1 = rng.uniform(0.01, 0.99 - h);
  obj.box = Box{x1, y1, x1 + w, y1 + h};

  // Part sub-region: area fraction strictly inside [0.1, 0.3] of the object.
  const double frac = rng.uniform(0.12, 0.28);
  const double aspect = rng.uniform(0.75, 1.33);
  double pw = std::sqrt(frac * w * h * aspect);
  double ph = frac * w * h / pw;
  pw = std::min(pw, 0.96 * w);
  ph = std::min(ph, 0.96 * h);
  const double margin_x = w - pw;
  const double margin_y = h - ph;
  const double px1 = x1 + rng.uniform(0.02, 0.98) * margin_x;
  const double py1 = y1 + rng.uniform(0.02, 0.98) * margin_y;
  obj.part = Box{px1, py1, px1 + pw, py1 + ph};
  return obj;
}

Scene make_scene(const GenConfig& cfg, Rng& rng, int forced_category) {
  Scene scene;
  const int n_obj =
      cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
  for (int i = 0; i < n_obj; ++i) {
    const int category =
        (i == 0 && forced_category >= 0) ? forced_category : rng.uniform_int(cfg.categories);
    SceneObject obj = make_object(category, rng);
    for (int attempt = 0; attempt < 25; ++attempt) {
      bool ok = true;
      for (const auto& other : scene.objects) {
        if (iou(obj.box, other.box) > 0.3) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      obj = make_object(category, rng);
    }
    scene.objects.push_back(obj);
  }
  scene.labels.assign(cfg.categories, 0);
  for (const auto& obj : scene.objects) scene.labels[obj.category] = 1;
  return scene;
}

Box sample_background_box(const Scene& scene, Rng& rng) {
  for (int attempt = 0; attempt < 40; ++attempt) {
    const double w = rng.uniform(0.05, 0.3);
    const double h = rng.uniform(0.05, 0.3);
    const double x1 = rng.uniform(0.0, 1.0 - w);
    const double y1 = rng.uniform(0.0, 1.0 - h);
    const Box b{x1, y1, x1 + w, y1 + h};
    bool clear = true;
    for (const auto& obj : scene.objects) {
      if (iou(b, obj.box) >= 0.2) {
        clear = false;
        break;
      }
    }
    if (clear) return b;
  }
  // Crowded scene: fall back to the last draw regardless of overlap.
  const double w = rng.uniform(0.05, 0.3);
  const double h = rng.uniform(0.05, 0.3);
  const double x1 = rng.uniform(0.0, 1.0 - w);
  const double y1 = rng.uniform(0.0, 1.0 - h);
  return Box{x1, y1, x1 + w, y1 + h};
}

std::vector<Box> make_proposals(const GenConfig& cfg, const Scene& scene, Rng& rng) {
  std::vector<Box> boxes;
  for (const auto& obj : scene.objects) {
    // One tight full-object proposal (IoU >= 0.7 guaranteed).
    Box full = jitter_box(obj.box, 0.02, rng);
    for (int attempt = 0; attempt < 20 && iou(full, obj.box) < 0.7; ++attempt) {
      full = jitter_box(obj.box, 0.02, rng);
    }
    if (iou(full, obj.box) < 0.7) full = obj.box;
    boxes.push_back(full);
    boxes.push_back(jitter_box(obj.box, 0.07, rng));

    // One tight part-only proposal: IoU >= 0.5 with the part, < 0.4 with the
    // object (the part/object area ratio <= 0.3 keeps the second bound easy).
    Box part = jitter_box(obj.part, 0.02, rng);
    for (int attempt = 0;
         attempt < 20 && (iou(part, obj.part) < 0.5 || iou(part, obj.box) >= 0.4); ++attempt) {
      part = jitter_box(obj.part, 0.02, rng);
    }
    if (iou(part, obj.part) < 0.5 || iou(part, obj.box) >= 0.4) part = obj.part;
    boxes.push_back(part);
    boxes.push_back(jitter_box(obj.part, 0.07, rng));

    // A box between part and object extent.
    boxes.push_back(lerp_box(obj.part, obj.box, rng.uniform(0.35, 0.75)));
  }
  if (static_cast<int>(boxes.size()) > cfg.proposals_per_image) {
    boxes.resize(cfg.proposals_per_image);
  }
  while (static_cast<int>(boxes.size()) < cfg.proposals_per_image) {
    boxes.push_back(sample_background_box(scene, rng));
  }
  return boxes;
}

}  // namespace

void validate(const GenConfig& cfg) {
  if (cfg.categories < 2) throw ConfigError("categories must be >= 2");
  if (cfg.feature_dim < 8) throw ConfigError("feature_dim must be >= 8");
  if (cfg.feature_dim < 2 * cfg.categories + 3) {
    throw ConfigError("feature_dim must be >= 2*categories + 3 to fit the signature span");
  }
  if (cfg.train_scenes < 1) throw ConfigError("train_scenes must be >= 1");
  if (cfg.test_scenes < 0) throw ConfigError("test_scenes must be >= 0");
  if (cfg.proposals_per_image < 10) throw ConfigError("proposals_per_image must be >= 10");
  if (cfg.noise < 0.0) throw ConfigError("noise must be >= 0");
  if (cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects) {
    throw ConfigError("min_objects/max_objects must satisfy 1 <= min <= max");
  }
  if (cfg.part_cos < 0.0 || cfg.part_cos > 0.2) {
    throw ConfigError("part_cos must lie in [0, 0.2]");
  }
  if (cfg.body_cos < 0.6 || cfg.body_cos > 1.0) {
    throw ConfigError("body_cos must lie in [0.6, 1]");
  }
  if (cfg.distractor_rate < 0.0 || cfg.distractor_rate > 1.0) {
    throw ConfigError("distractor_rate must lie in [0, 1]");
  }
  if (!(cfg.distractor_min_mix >= 0.0 && cfg.distractor_max_mix <= 1.0 &&
        cfg.distractor_min_mix <= cfg.distractor_max_mix)) {
    throw ConfigError("distractor_min_mix/distractor_max_mix must satisfy 0 <= min <= max <= 1");
  }
}

CategorySignatures make_signatures(const GenConfig& cfg) {
  validate(cfg);
  const int C = cfg.categories;
  const int D = cfg.feature_dim;
  CategorySignatures sigs;
  sigs.dim = D;
  sigs.part.assign(C, Vec(D, 0.0));
  sigs.body.assign(C, Vec(D, 0.0));
  // part[c] = sqrt(p)*e0 + sqrt(1-p)*e_{1+c}   -> pairwise cosine exactly p
  // body[c] = sqrt(b)*e_{C+1} + sqrt(1-b)*e_{C+2+c} -> pairwise cosine exactly b
  // Parts and bodies occupy disjoint axes, so cross cosines are zero.
  for (int c = 0; c < C; ++c) {
    sigs.part[c][0] = std::sqrt(cfg.part_cos);
    sigs.part[c][1 + c] = std::sqrt(1.0 - cfg.part_cos);
    sigs.body[c][C + 1] = std::sqrt(cfg.body_cos);
    sigs.body[c][C + 2 + c] = std::sqrt(1.0 - cfg.body_cos);
  }
  return sigs;
}

Vec draw_bg_noise(const GenConfig& cfg, const CategorySignatures& sigs, Rng& rng) {
  const int D = sigs.dim;
  const int span = sigs.span_dim();
  Vec g(D, 0.0);
  for (int d = span; d < D; ++d) g[d] = rng.normal();
  l2_normalize(g);
  if (rng.uniform() < cfg.distractor_rate) {
    const int c = rng.uniform_int(static_cast<int>(sigs.part.size()));
    const double mix = rng.uniform(cfg.distractor_min_mix, cfg.distractor_max_mix);
    const double rest = std::sqrt(1.0 - mix * mix);
    Vec v(D, 0.0);
    for (int d = 0; d < D; ++d) v[d] = mix * sigs.part[c][d] + rest * g[d];
    return v;
  }
  return g;
}

Vec proposal_feature(const Box& proposal, const Scene& scene, const CategorySignatures& sigs,
                     const Vec& bg_noise, double noise_scale, Rng& rng) {
  const int D = sigs.dim;
  Vec f(D, 0.0);
  double max_on_object = 0.0;
  for (const auto& obj : scene.objects) {
    // Average-pooling analogue: each region contributes by its area share of
    // the proposal. A box on the part is pure part signature; a full-object
    // box is body-dominated because the part covers only ~10-30% of it.
    const double w_part = coverage(proposal, obj.part);
    const double w_body = std::max(0.0, coverage(proposal, obj.box) - w_part);
    for (int d = 0; d < D; ++d) {
      f[d] += w_part * sigs.part[obj.category][d] + w_body * sigs.body[obj.category][d];
    }
    max_on_object = std::max(max_on_object, coverage(proposal, obj.box));
  }
  const double w_bg = 1.0 - max_on_object;
  for (int d = 0; d < D; ++d) f[d] += w_bg * bg_noise[d];
  if (noise_scale > 0.0) {
    for (int d = 0; d < D; ++d) f[d] += noise_scale * rng.normal();
  }
  l2_normalize(f);
  return f;
}

Dataset generate_dataset(const GenConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.signatures = make_signatures(cfg);
  Rng rng(seed);

  auto build_example = [&](int forced_category) {
    Example ex;
    ex.scene = make_scene(cfg, rng, forced_category);
    const std::vector<Box> boxes = make_proposals(cfg, ex.scene, rng);
    ex.proposals.boxes = boxes;
    ex.proposals.features = Mat(static_cast<int>(boxes.size()), cfg.feature_dim);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const Vec noise = draw_bg_noise(cfg, ds.signatures, rng);
      const Vec f = proposal_feature(boxes[i], ex.scene, ds.signatures, noise, cfg.noise, rng);
      for (int d = 0; d < cfg.feature_dim; ++d) {
        ex.proposals.features(static_cast<int>(i), d) = f[d];
      }
    }
    return ex;
  };

  ds.train.reserve(cfg.train_scenes);
  for (int i = 0; i < cfg.train_scenes; ++i) ds.train.push_back(build_example(-1));

  // Resample until every category appears in at least one training scene.
  int slot = 0;
  for (int round = 0; round < 1000; ++round) {
    std::vector<int> seen(cfg.categories, 0);
    for (const auto& ex : ds.train) {
      for (int c = 0; c < cfg.categories; ++c) {
        if (ex.scene.labels[c]) seen[c] = 1;
      }
    }
    int missing = -1;
    for (int c = 0; c < cfg.categories; ++c) {
      if (!seen[c]) {
        missing = c;
        break;
      }
    }
    if (missing < 0) break;
    ds.train[slot % cfg.train_scenes] = build_example(missing);
    ++slot;
  }

  ds.test.reserve(cfg.test_scenes);
  for (int i = 0; i < cfg.test_scenes; ++i) ds.test.push_back(build_example(-1));
  return ds;
}

namespace {

nlohmann::json config_to_json(const GenConfig& cfg) {
  return nlohmann::json{{"categories", cfg.categories},
                        {"feature_dim", cfg.feature_dim},
                        {"train_scenes", cfg.train_scenes},
                        {"test_scenes", cfg.test_scenes},
                        {"proposals_per_image", cfg.proposals_per_image},
                        {"noise", cfg.noise},
                        {"min_objects", cfg.min_objects},
                        {"max_objects", cfg.max_objects},
                        {"part_cos", cfg.part_cos},
                        {"body_cos", cfg.body_cos},
                        {"distractor_rate", cfg.distractor_rate},
                        {"distractor_min_mix", cfg.distractor_min_mix},
                        {"distractor_max_mix", cfg.distractor_max_mix}};
}

GenConfig config_from_json(const nlohmann::json& j) {
  GenConfig cfg;
  cfg.categories = j.at("categories").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.train_scenes = j.at("train_scenes").get<int>();
  cfg.test_scenes = j.at("test_scenes").get<int>();
  cfg.proposals_per_image = j.at("proposals_per_image").get<int>();
  cfg.noise = j.at("noise").get<double>();
  cfg.min_objects = j.at("min_objects").get<int>();
  cfg.max_objects = j.at("max_objects").get<int>();
  cfg.part_cos = j.at("part_cos").get<double>();
  cfg.body_cos = j.at("body_cos").get<double>();
  cfg.distractor_rate = j.at("distractor_rate").get<double>();
  cfg.distractor_min_mix = j.at("distractor_min_mix").get<double>();
  cfg.distractor_max_mix = j.at("distractor_max_mix").get<double>();
  return cfg;
}

nlohmann::json example_to_json(const Example& ex) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : ex.scene.objects) {
    objs.push_back({{"category", o.category},
                    {"box", detail::box_to_json(o.box)},
                    {"part", detail::box_to_json(o.part)}});
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : ex.proposals.boxes) boxes.push_back(detail::box_to_json(b));
  return nlohmann::json{{"objects", std::move(objs)},
                        {"labels", ex.scene.labels},
                        {"proposals",
                         {{"boxes", std::move(boxes)},
                          {"features", detail::mat_to_json(ex.proposals.features)}}}};
}

Example example_from_json(const nlohmann::json& j) {
  Example ex;
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.category = o.at("category").get<int>();
    obj.box = detail::box_from_json(o.at("box"));
    obj.part = detail::box_from_json(o.at("part"));
    ex.scene.objects.push_back(obj);
  }
  ex.scene.labels = j.at("labels").get<std::vector<int>>();
  for (const auto& b : j.at("proposals").at("boxes")) {
    ex.proposals.boxes.push_back(detail::box_from_json(b));
  }
  ex.proposals.features = detail::mat_from_json(j.at("proposals").at("features"));
  return ex;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json sig{{"part", nlohmann::json::array()}, {"body", nlohmann::json::array()}};
  for (const auto& v : ds.signatures.part) sig["part"].push_back(v);
  for (const auto& v : ds.signatures.body) sig["body"].push_back(v);
  nlohmann::json train = nlohmann::json::array();
  for (const auto& ex : ds.train) train.push_back(example_to_json(ex));
  nlohmann::json test = nlohmann::json::array();
  for (const auto& ex : ds.test) test.push_back(example_to_json(ex));
  nlohmann::json j{{"config", config_to_json(ds.config)},
                   {"seed", ds.seed},
                   {"signatures", std::move(sig)},
                   {"train", std::move(train)},
                   {"test", std::move(test)}};
  detail::write_json_file(j, path, "dataset");
}

Dataset load_dataset(const std::string& path) {
  const nlohmann::json j = detail::load_json_file(path, "dataset");
  Dataset ds;
  ds.config = config_from_json(j.at("config"));
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.signatures.dim = ds.config.feature_dim;
  for (const auto& v : j.at("signatures").at("part")) {
    ds.signatures.part.push_back(v.get<Vec>());
  }
  for (const auto& v : j.at("signatures").at("body")) {
    ds.signatures.body.push_back(v.get<Vec>());
  }
  for (const auto& e : j.at("train")) ds.train.push_back(example_from_json(e));
  for (const auto& e : j.at("test")) ds.test.push_back(example_from_json(e));
  return ds;
}

}  // namespace ndi
