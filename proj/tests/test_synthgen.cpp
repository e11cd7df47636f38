#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "ndi/errors.hpp"
#include "ndi/synthgen.hpp"

using namespace ndi;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.categories = 3;
  cfg.feature_dim = 16;
  cfg.train_scenes = 12;
  cfg.test_scenes = 4;
  cfg.proposals_per_image = 20;
  return cfg;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.train.size() != b.train.size() || a.test.size() != b.test.size()) return false;
  auto examples_equal = [](const Example& x, const Example& y) {
    if (x.scene.labels != y.scene.labels) return false;
    if (x.scene.objects.size() != y.scene.objects.size()) return false;
    for (std::size_t i = 0; i < x.scene.objects.size(); ++i) {
      const auto& ox = x.scene.objects[i];
      const auto& oy = y.scene.objects[i];
      if (ox.category != oy.category || ox.box.x1 != oy.box.x1 || ox.part.y2 != oy.part.y2) {
        return false;
      }
    }
    if (x.proposals.features.a != y.proposals.features.a) return false;
    for (std::size_t i = 0; i < x.proposals.boxes.size(); ++i) {
      if (x.proposals.boxes[i].x1 != y.proposals.boxes[i].x1) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    if (!examples_equal(a.train[i], b.train[i])) return false;
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    if (!examples_equal(a.test[i], b.test[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("generate_dataset is deterministic in (config, seed)") {
  const GenConfig cfg = small_config();
  const Dataset a = generate_dataset(cfg, 5);
  const Dataset b = generate_dataset(cfg, 5);
  CHECK(datasets_equal(a, b));
  const Dataset c = generate_dataset(cfg, 6);
  CHECK(!datasets_equal(a, c));
}

TEST_CASE("proposal count is forced by the config") {
  GenConfig cfg = small_config();
  cfg.train_scenes = 10;
  cfg.proposals_per_image = 50;
  cfg.feature_dim = 32;
  const Dataset ds = generate_dataset(cfg, 3);
  for (const auto& ex : ds.train) {
    CHECK(ex.proposals.boxes.size() == 50);
    CHECK(ex.proposals.features.rows == 50);
  }
}

TEST_CASE("every category appears in some training scene") {
  GenConfig cfg;
  cfg.train_scenes = 200;
  cfg.test_scenes = 0;
  const Dataset ds = generate_dataset(cfg, 11);
  std::vector<int> seen(cfg.categories, 0);
  for (const auto& ex : ds.train) {
    for (int c = 0; c < cfg.categories; ++c) {
      if (ex.scene.labels[c]) seen[c] = 1;
    }
  }
  for (int c = 0; c < cfg.categories; ++c) CHECK(seen[c] == 1);
}

TEST_CASE("scene invariants: labels, part containment, per-object proposals") {
  const GenConfig cfg = small_config();
  const Dataset ds = generate_dataset(cfg, 17);
  for (const auto& ex : ds.train) {
    // Multi-hot labels match the object list.
    std::vector<int> expect(cfg.categories, 0);
    for (const auto& obj : ex.scene.objects) expect[obj.category] = 1;
    CHECK(ex.scene.labels == expect);
    CHECK(ex.scene.objects.size() >= 1);
    CHECK(ex.scene.objects.size() <= 3);

    for (const auto& obj : ex.scene.objects) {
      CHECK(obj.box.valid());
      CHECK(obj.part.valid());
      CHECK(obj.part.x1 > obj.box.x1);
      CHECK(obj.part.y1 > obj.box.y1);
      CHECK(obj.part.x2 < obj.box.x2);
      CHECK(obj.part.y2 < obj.box.y2);
      const double frac = obj.part.area() / obj.box.area();
      CHECK(frac >= 0.1);
      CHECK(frac <= 0.3);

      bool has_full = false;
      bool has_part = false;
      for (const Box& p : ex.proposals.boxes) {
        if (iou(p, obj.box) >= 0.7) has_full = true;
        if (iou(p, obj.part) >= 0.5 && iou(p, obj.box) < 0.4) has_part = true;
      }
      CHECK(has_full);
      CHECK(has_part);
    }

    for (int i = 0; i < ex.proposals.features.rows; ++i) {
      double n2 = 0.0;
      for (int d = 0; d < ex.proposals.features.cols; ++d) {
        const double x = ex.proposals.features(i, d);
        CHECK(std::isfinite(x));
        n2 += x * x;
      }
      CHECK(std::fabs(std::sqrt(n2) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("signatures have the advertised cosine structure") {
  GenConfig cfg;
  const CategorySignatures sigs = make_signatures(cfg);
  auto dot = [&](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  for (int a = 0; a < cfg.categories; ++a) {
    CHECK(dot(sigs.part[a], sigs.part[a]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dot(sigs.body[a], sigs.body[a]) == doctest::Approx(1.0).epsilon(1e-12));
    for (int b = 0; b < cfg.categories; ++b) {
      if (a == b) continue;
      CHECK(dot(sigs.part[a], sigs.part[b]) == doctest::Approx(cfg.part_cos).epsilon(1e-12));
      CHECK(dot(sigs.part[a], sigs.part[b]) <= 0.2 + 1e-12);
      CHECK(dot(sigs.body[a], sigs.body[b]) == doctest::Approx(cfg.body_cos).epsilon(1e-12));
      CHECK(dot(sigs.body[a], sigs.body[b]) >= 0.6 - 1e-12);
    }
  }
}

TEST_CASE("proposal_feature follows the coverage-mixing formula") {
  GenConfig cfg;
  cfg.categories = 2;
  cfg.feature_dim = 8;
  const CategorySignatures sigs = make_signatures(cfg);
  Scene scene;
  SceneObject obj;
  obj.category = 1;
  obj.box = Box{0.2, 0.2, 0.6, 0.6};
  obj.part = Box{0.3, 0.3, 0.42, 0.38};  // area 0.0096, object area 0.16 -> frac 0.06? keep inside
  obj.part = Box{0.3, 0.3, 0.46, 0.45};  // 0.16*0.15 area -> frac 0.15
  scene.objects.push_back(obj);
  scene.labels = {0, 1};

  Rng rng(1);
  Vec unit_noise(8, 0.0);
  unit_noise[7] = 1.0;

  // Proposal exactly on the part: pure part signature (the part box holds no
  // body region, so the body share is zero).
  const Vec f_part = proposal_feature(obj.part, scene, sigs, unit_noise, 0.0, rng);
  for (int d = 0; d < 8; ++d) {
    CHECK(f_part[d] == doctest::Approx(sigs.part[1][d]).epsilon(1e-9));
  }

  // Proposal equal to the object box: area-share mixing gives
  // normalize(frac*part_sig + (1-frac)*body_sig).
  const double frac = obj.part.area() / obj.box.area();
  const Vec f_full = proposal_feature(obj.box, scene, sigs, unit_noise, 0.0, rng);
  Vec expect(8, 0.0);
  double n2 = 0.0;
  for (int d = 0; d < 8; ++d) {
    expect[d] = frac * sigs.part[1][d] + (1.0 - frac) * sigs.body[1][d];
    n2 += expect[d] * expect[d];
  }
  for (int d = 0; d < 8; ++d) {
    CHECK(f_full[d] == doctest::Approx(expect[d] / std::sqrt(n2)).epsilon(1e-9));
  }

  // Disjoint proposal: the (unit) background noise comes back unchanged.
  const Vec f_bg = proposal_feature(Box{0.8, 0.8, 0.95, 0.95}, scene, sigs, unit_noise, 0.0, rng);
  for (int d = 0; d < 8; ++d) {
    CHECK(f_bg[d] == doctest::Approx(unit_noise[d]).epsilon(1e-12));
  }
}

TEST_CASE("config validation names the offending field") {
  GenConfig cfg;
  cfg.categories = 1;
  CHECK_THROWS_WITH_AS(validate(cfg), "categories must be >= 2", ConfigError);
  cfg = GenConfig{};
  cfg.feature_dim = 7;
  CHECK_THROWS_WITH_AS(validate(cfg), "feature_dim must be >= 8", ConfigError);
  cfg = GenConfig{};
  cfg.categories = 7;
  cfg.feature_dim = 16;
  CHECK_THROWS_AS(validate(cfg), ConfigError);  // span does not fit
  cfg = GenConfig{};
  cfg.proposals_per_image = 9;
  CHECK_THROWS_WITH_AS(validate(cfg), "proposals_per_image must be >= 10", ConfigError);
}

TEST_CASE("dataset save/load round trip") {
  GenConfig cfg = small_config();
  cfg.train_scenes = 3;
  cfg.test_scenes = 2;
  const Dataset ds = generate_dataset(cfg, 21);
  const std::string path = "dataset_roundtrip_test.json";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  CHECK(back.seed == ds.seed);
  CHECK(back.config.categories == cfg.categories);
  CHECK(datasets_equal(ds, back));
  std::remove(path.c_str());
}
