// ndiwsod: dataset generation, training, evaluation and ablation sweeps for
// the negative-deterministic-information WSOD pipeline on the synthetic
// proposal-feature benchmark.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndi/errors.hpp"
#include "ndi/eval.hpp"
#include "ndi/synthgen.hpp"
#include "ndi/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "ndiwsod 0.1.0";

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Run manifest, written with status "running" before work starts and
/// finalized afterwards.
class Manifest {
 public:
  Manifest(std::string path, std::string command) : path_(std::move(path)) {
    j_["command"] = std::move(command);
    j_["version"] = kVersion;
    j_["started_at"] = timestamp_utc();
    j_["status"] = "running";
    write();
  }
  json& data() { return j_; }
  void finalize(const std::string& status) {
    j_["finished_at"] = timestamp_utc();
    j_["status"] = status;
    write();
  }

 private:
  void write() const {
    std::ofstream out(path_);
    if (out) out << j_.dump(2) << '\n';
  }
  std::string path_;
  json j_;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ndi::FileNotFoundError("config file not found: " + path);
  json j;
  in >> j;
  if (!j.is_object()) throw ndi::ConfigError("config file must hold a flat JSON object");
  return j;
}

template <typename T>
void maybe_set(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ndi::GenConfig gen_config_from(const json& j) {
  ndi::GenConfig cfg;
  maybe_set(j, "categories", cfg.categories);
  maybe_set(j, "feature_dim", cfg.feature_dim);
  maybe_set(j, "train_scenes", cfg.train_scenes);
  maybe_set(j, "test_scenes", cfg.test_scenes);
  maybe_set(j, "proposals_per_image", cfg.proposals_per_image);
  maybe_set(j, "noise", cfg.noise);
  maybe_set(j, "min_objects", cfg.min_objects);
  maybe_set(j, "max_objects", cfg.max_objects);
  maybe_set(j, "part_cos", cfg.part_cos);
  maybe_set(j, "body_cos", cfg.body_cos);
  maybe_set(j, "distractor_rate", cfg.distractor_rate);
  maybe_set(j, "distractor_min_mix", cfg.distractor_min_mix);
  maybe_set(j, "distractor_max_mix", cfg.distractor_max_mix);
  return cfg;
}

ndi::TrainConfig train_config_from(const json& j) {
  ndi::TrainConfig cfg;
  maybe_set(j, "tau", cfg.hp.tau);
  maybe_set(j, "alpha", cfg.hp.alpha);
  maybe_set(j, "beta", cfg.hp.beta);
  maybe_set(j, "queue_len", cfg.hp.queue_len);
  maybe_set(j, "lr", cfg.hp.lr);
  maybe_set(j, "momentum", cfg.hp.momentum);
  maybe_set(j, "weight_decay", cfg.hp.weight_decay);
  maybe_set(j, "iters", cfg.hp.iters);
  maybe_set(j, "heads", cfg.heads);
  maybe_set(j, "lr_decay_iter", cfg.lr_decay_iter);
  maybe_set(j, "lr_decay", cfg.lr_decay);
  maybe_set(j, "use_cmu", cfg.use_cmu);
  maybe_set(j, "use_nice", cfg.use_nice);
  maybe_set(j, "use_ncl", cfg.use_ncl);
  maybe_set(j, "use_ngis", cfg.use_ngis);
  maybe_set(j, "select_fraction", cfg.select_fraction);
  std::uint64_t seed = cfg.seed;
  maybe_set(j, "seed", seed);
  cfg.seed = seed;
  if (j.contains("ngis_mode")) {
    const std::string mode = j.at("ngis_mode").get<std::string>();
    if (mode == "distance") {
      cfg.ngis_mode = ndi::NgisMode::kDistance;
    } else if (mode == "similarity") {
      cfg.ngis_mode = ndi::NgisMode::kSimilarity;
    } else {
      throw ndi::ConfigError("ngis_mode must be 'distance' or 'similarity'");
    }
  }
  return cfg;
}

json train_config_to_json(const ndi::TrainConfig& cfg) {
  return json{{"tau", cfg.hp.tau},
              {"alpha", cfg.hp.alpha},
              {"beta", cfg.hp.beta},
              {"queue_len", cfg.hp.queue_len},
              {"lr", cfg.hp.lr},
              {"momentum", cfg.hp.momentum},
              {"weight_decay", cfg.hp.weight_decay},
              {"iters", cfg.hp.iters},
              {"heads", cfg.heads},
              {"lr_decay_iter", cfg.lr_decay_iter},
              {"lr_decay", cfg.lr_decay},
              {"use_cmu", cfg.use_cmu},
              {"use_nice", cfg.use_nice},
              {"use_ncl", cfg.use_ncl},
              {"use_ngis", cfg.use_ngis},
              {"ngis_mode", cfg.ngis_mode == ndi::NgisMode::kDistance ? "distance" : "similarity"},
              {"select_fraction", cfg.select_fraction},
              {"seed", cfg.seed}};
}

json gen_config_to_json(const ndi::GenConfig& cfg) {
  return json{{"categories", cfg.categories},
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

struct TrainFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string ablate;
  std::string ngis_mode;
  std::string bank;
  std::optional<int> queue_len;
  std::optional<int> iters;
};

ndi::TrainConfig resolve_train_config(const TrainFlags& flags) {
  ndi::TrainConfig cfg = train_config_from(load_config_file(flags.config_path));
  if (!flags.ablate.empty()) ndi::apply_ablation(cfg, flags.ablate);
  if (!flags.bank.empty()) {
    if (flags.bank == "cmu") {
      cfg.use_cmu = true;
    } else if (flags.bank == "fifo") {
      cfg.use_cmu = false;
    } else {
      throw ndi::ConfigError("--bank must be 'fifo' or 'cmu'");
    }
  }
  if (!flags.ngis_mode.empty()) {
    if (flags.ngis_mode == "distance") {
      cfg.ngis_mode = ndi::NgisMode::kDistance;
    } else if (flags.ngis_mode == "similarity") {
      cfg.ngis_mode = ndi::NgisMode::kSimilarity;
    } else {
      throw ndi::ConfigError("--ngis-mode must be 'distance' or 'similarity'");
    }
  }
  if (flags.queue_len) cfg.hp.queue_len = *flags.queue_len;
  if (flags.iters) cfg.hp.iters = *flags.iters;
  if (flags.seed) cfg.seed = *flags.seed;
  ndi::validate(cfg);
  return cfg;
}

int cmd_generate(const std::string& config_path, const std::string& out_path,
                 std::uint64_t seed) {
  ndi::GenConfig cfg = gen_config_from(load_config_file(config_path));
  ndi::validate(cfg);
  Manifest manifest(out_path + ".manifest.json", "generate");
  manifest.data()["seed"] = seed;
  manifest.data()["config"] = gen_config_to_json(cfg);
  manifest.data()["outputs"] = json::array({out_path});

  const ndi::Dataset ds = ndi::generate_dataset(cfg, seed);
  ndi::save_dataset(ds, out_path);
  manifest.finalize("complete");

  std::vector<long long> histogram(cfg.categories, 0);
  long long proposals = 0;
  for (const auto& ex : ds.train) {
    proposals += static_cast<long long>(ex.proposals.boxes.size());
    for (const auto& obj : ex.scene.objects) ++histogram[obj.category];
  }
  std::cout << "wrote " << out_path << "\n"
            << "train scenes: " << ds.train.size() << ", test scenes: " << ds.test.size()
            << ", train proposals: " << proposals << "\n"
            << "train object histogram per category:";
  for (long long h : histogram) std::cout << ' ' << h;
  std::cout << '\n';
  return 0;
}

int cmd_train(const std::string& dataset_path, const TrainFlags& flags) {
  ndi::TrainConfig cfg = resolve_train_config(flags);
  const ndi::Dataset ds = ndi::load_dataset(dataset_path);
  fs::create_directories(flags.out_dir);

  const char* log_env = std::getenv("NDI_LOG");
  if (log_env != nullptr && std::string(log_env) == "debug") {
    cfg.debug_dump_path = (fs::path(flags.out_dir) / "seed_dump.jsonl").string();
  }

  Manifest manifest((fs::path(flags.out_dir) / "manifest.json").string(), "train");
  manifest.data()["seed"] = cfg.seed;
  manifest.data()["config"] = train_config_to_json(cfg);
  manifest.data()["inputs"] = json::array({dataset_path});
  manifest.data()["outputs"] =
      json::array({"checkpoint.json", "bank.json", "report.json", "metrics.csv"});

  const ndi::TrainResult result = ndi::train(cfg, ds);
  ndi::save_checkpoint(result.params, (fs::path(flags.out_dir) / "checkpoint.json").string());
  ndi::save_bank(result.bank, (fs::path(flags.out_dir) / "bank.json").string());
  ndi::save_report(result.report, (fs::path(flags.out_dir) / "report.json").string());
  ndi::save_metrics_csv(result.report, (fs::path(flags.out_dir) / "metrics.csv").string());
  manifest.finalize("complete");

  std::printf("trained %d iterations: mAP %.4f, CorLoc %.4f, part-only rate %.4f (%.1fs)\n",
              cfg.hp.iters, result.report.final_map, result.report.final_corloc,
              result.report.final_part_only, result.report.wall_clock_seconds);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& out_path) {
  const ndi::ModelParams params = ndi::load_checkpoint(checkpoint_path);
  const ndi::Dataset ds = ndi::load_dataset(dataset_path);
  if (params.dim != ds.config.feature_dim || params.categories != ds.config.categories) {
    throw ndi::ContractError(
        "checkpoint shape (D=" + std::to_string(params.dim) +
        ", C=" + std::to_string(params.categories) + ") does not match dataset shape (D=" +
        std::to_string(ds.config.feature_dim) + ", C=" + std::to_string(ds.config.categories) +
        ")");
  }
  Manifest manifest(out_path + ".manifest.json", "eval");
  manifest.data()["inputs"] = json::array({checkpoint_path, dataset_path});
  manifest.data()["outputs"] = json::array({out_path});

  const ndi::EvalResult result = ndi::evaluate(params, ds.test, ds.train);
  ndi::save_eval(result, out_path);
  manifest.finalize("complete");
  std::printf("mAP %.4f, CorLoc %.4f, part-only rate %.4f, detections %lld\n", result.map,
              result.corloc, result.part_only, result.detections);
  return 0;
}

int cmd_ablate(const std::string& dataset_path, const TrainFlags& flags,
               const std::vector<std::uint64_t>& seeds) {
  const ndi::Dataset ds = ndi::load_dataset(dataset_path);
  fs::create_directories(flags.out_dir);
  Manifest manifest((fs::path(flags.out_dir) / "manifest.json").string(), "ablate");
  manifest.data()["inputs"] = json::array({dataset_path});
  manifest.data()["outputs"] = json::array({"ablation.csv"});
  manifest.data()["seeds"] = seeds;

  const std::string csv_path = (fs::path(flags.out_dir) / "ablation.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw ndi::ContractError("cannot write ablation table: " + csv_path);
  csv << "variant,L,seed,mAP,corloc\n";

  auto run_cell = [&](const std::string& variant, int queue_len, std::uint64_t seed) {
    ndi::TrainConfig cfg = resolve_train_config(flags);
    ndi::apply_ablation(cfg, variant);
    cfg.hp.queue_len = queue_len;
    cfg.seed = seed;
    const ndi::TrainResult result = ndi::train(cfg, ds);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%d,%llu,%.6f,%.6f\n", variant.c_str(), queue_len,
                  static_cast<unsigned long long>(seed), result.report.final_map,
                  result.report.final_corloc);
    csv << buf;
    csv.flush();
    return result.report.final_map;
  };

  const ndi::TrainConfig base = resolve_train_config(flags);
  std::cout << "variant means over " << seeds.size() << " seeds:\n";
  for (const std::string& variant : {"baseline", "ncl", "ngis", "full"}) {
    double sum = 0.0;
    for (std::uint64_t seed : seeds) sum += run_cell(variant, base.hp.queue_len, seed);
    std::printf("  %-8s mAP %.4f\n", variant.c_str(), sum / seeds.size());
  }
  for (const std::string& variant : {"fifo", "cmu", "cmu_nice"}) {
    for (int queue_len : {1, 3, 5, 7, 9}) {
      double sum = 0.0;
      for (std::uint64_t seed : seeds) sum += run_cell(variant, queue_len, seed);
      std::printf("  %-8s L=%d mAP %.4f\n", variant.c_str(), queue_len, sum / seeds.size());
    }
  }
  manifest.finalize("complete");
  std::cout << "wrote " << csv_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised detection on a synthetic proposal benchmark "
               "with a negative-information feature bank"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset file");
  std::string gen_config;
  std::string gen_out = "dataset.json";
  std::uint64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "flat JSON config file");
  gen->add_option("--out", gen_out, "output dataset path");
  gen->add_option("--seed", gen_seed, "master RNG seed");

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset file");
  std::string tr_dataset;
  TrainFlags tr_flags;
  std::uint64_t tr_seed = 0;
  int tr_queue = 0;
  int tr_iters = 0;
  tr->add_option("dataset", tr_dataset, "dataset JSON path")->required();
  tr->add_option("--config", tr_flags.config_path, "flat JSON config file");
  tr->add_option("--out", tr_flags.out_dir, "output directory")->required();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "run seed");
  tr->add_option("--ablate", tr_flags.ablate,
                 "ablation variant: baseline|ncl|ngis|full|fifo|cmu|cmu_nice");
  tr->add_option("--ngis-mode", tr_flags.ngis_mode, "distance|similarity");
  tr->add_option("--bank", tr_flags.bank, "bank update strategy: fifo|cmu");
  auto* tr_queue_opt = tr->add_option("--queue-len", tr_queue, "bank queue length L");
  auto* tr_iters_opt = tr->add_option("--iters", tr_iters, "training iterations");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ev_checkpoint;
  std::string ev_dataset;
  std::string ev_out = "eval.json";
  ev->add_option("checkpoint", ev_checkpoint, "checkpoint JSON path")->required();
  ev->add_option("dataset", ev_dataset, "dataset JSON path")->required();
  ev->add_option("--out", ev_out, "output eval.json path");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the ablation grid and emit a CSV table");
  std::string ab_dataset;
  TrainFlags ab_flags;
  std::vector<std::uint64_t> ab_seeds{1, 2, 3};
  int ab_iters = 0;
  ab->add_option("dataset", ab_dataset, "dataset JSON path")->required();
  ab->add_option("--config", ab_flags.config_path, "flat JSON config file");
  ab->add_option("--out", ab_flags.out_dir, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "run seeds for each grid cell");
  auto* ab_iters_opt = ab->add_option("--iters", ab_iters, "training iterations per cell");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_config, gen_out, gen_seed);
    if (tr->parsed()) {
      if (*tr_seed_opt) tr_flags.seed = tr_seed;
      if (*tr_queue_opt) tr_flags.queue_len = tr_queue;
      if (*tr_iters_opt) tr_flags.iters = tr_iters;
      return cmd_train(tr_dataset, tr_flags);
    }
    if (ev->parsed()) return cmd_eval(ev_checkpoint, ev_dataset, ev_out);
    if (ab->parsed()) {
      if (*ab_iters_opt) ab_flags.iters = ab_iters;
      if (ab_seeds.empty()) throw ndi::ConfigError("--seeds must name at least one seed");
      return cmd_ablate(ab_dataset, ab_flags, ab_seeds);
    }
  } catch (const ndi::FileNotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ndi::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
