// lret: command-line surface for the resizer-classifier toolkit.
// Subcommands: synth | train | eval | explain | features | bench.
// One JSON config drives a run; explicit flags override config values.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lret/checkpoint.hpp"
#include "lret/explain.hpp"
#include "lret/features.hpp"
#include "lret/loader.hpp"
#include "lret/metrics.hpp"
#include "lret/model.hpp"
#include "lret/synth.hpp"
#include "lret/trainer.hpp"
#include "lret/tsne.hpp"

namespace {

constexpr const char* kVersion = "lret 0.1.0";

using nlohmann::json;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("config: " + path + ": " + e.what());
  }
  return j;
}

/// Typed lookup that names the JSON path on failure.
template <typename T>
T get_or(const json& j, const std::string& path, T fallback) {
  const json* cur = &j;
  std::string seen;
  size_t pos = 0;
  while (pos < path.size()) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    seen += (seen.empty() ? "" : ".") + key;
    if (!cur->is_object() || !cur->contains(key)) return fallback;
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  try {
    return cur->get<T>();
  } catch (const std::exception&) {
    throw std::runtime_error("config: invalid value at " + seen);
  }
}

std::string require_str(const json& j, const std::string& path) {
  std::string v = get_or<std::string>(j, path, "");
  if (v.empty()) throw std::runtime_error("config: missing required field " + path);
  return v;
}

lret::ModelSpec model_spec_from_config(const json& cfg) {
  lret::ModelSpec s;
  s.input_h = get_or<int>(cfg, "model.input_h", 256);
  s.input_w = get_or<int>(cfg, "model.input_w", s.input_h);
  s.resizer = lret::resizer_kind_from_string(get_or<std::string>(cfg, "model.resizer", "hfe"));
  s.hfe.input_h = s.input_h;
  s.hfe.input_w = s.input_w;
  s.hfe.target = get_or<int>(cfg, "model.hfe.target", 64);
  s.hfe.unit1_channels = get_or<int>(cfg, "model.hfe.unit1_channels", 4);
  s.hfe.unit2_channels = get_or<int>(cfg, "model.hfe.unit2_channels", 8);
  s.hfe.use_subsampling_pool = get_or<bool>(cfg, "model.hfe.use_subsampling_pool", false);
  s.hfe.post_norm = get_or<bool>(cfg, "model.hfe.post_norm", true);
  s.glr.input_h = s.input_h;
  s.glr.input_w = s.input_w;
  s.glr.target_h = get_or<int>(cfg, "model.glr.target_h", 64);
  s.glr.target_w = get_or<int>(cfg, "model.glr.target_w", s.glr.target_h);
  s.glr.filters = get_or<int>(cfg, "model.glr.filters", 16);
  s.glr.residual_blocks = get_or<int>(cfg, "model.glr.residual_blocks", 1);
  s.glr.leaky_slope = get_or<float>(cfg, "model.glr.leaky_slope", 0.2f);
  s.stat.target_h = get_or<int>(cfg, "model.static.target_h", 64);
  s.stat.target_w = get_or<int>(cfg, "model.static.target_w", s.stat.target_h);
  s.backbone.input_channels = s.resizer_channels();
  s.backbone.stage_channels =
      get_or<std::vector<int>>(cfg, "model.backbone.stage_channels", {8, 16});
  s.backbone.blocks_per_stage = get_or<std::vector<int>>(
      cfg, "model.backbone.blocks_per_stage",
      std::vector<int>(s.backbone.stage_channels.size(), 1));
  s.backbone.residual = get_or<bool>(cfg, "model.backbone.residual", true);
  s.num_classes = get_or<int>(cfg, "model.num_classes", 4);
  s.head_width = get_or<int>(cfg, "model.head_width", s.backbone.feature_channels());
  s.dropout_rate = get_or<float>(cfg, "model.dropout_rate", 0.5f);
  s.head_relu = get_or<bool>(cfg, "model.head_relu", true);
  return s;
}

lret::LoaderConfig loader_from_config(const json& cfg, uint64_t seed) {
  lret::LoaderConfig lc;
  lc.batch_size = get_or<int>(cfg, "loader.batch_size", 4);
  lc.shuffle_seed = get_or<uint64_t>(cfg, "loader.shuffle_seed", seed);
  lc.cache = get_or<bool>(cfg, "loader.cache", true);
  lc.prefetch_depth = get_or<int>(cfg, "loader.prefetch_depth", 2);
  lc.decode_workers = get_or<int>(cfg, "loader.decode_workers", 1);
  lc.class_cap = get_or<int>(cfg, "loader.class_cap", 0);
  lc.simulated_io_latency_ms = get_or<double>(cfg, "loader.simulated_io_latency_ms", 0.0);
  lc.cache_budget_bytes =
      get_or<int64_t>(cfg, "loader.cache_budget_bytes", lc.cache_budget_bytes);
  lc.validate();
  return lc;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunRecorder {
  std::string out_dir;
  std::string command;
  std::string config_digest;
  uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  RunRecorder(std::string dir, std::string cmd, const json& cfg, uint64_t seed_)
      : out_dir(std::move(dir)), command(std::move(cmd)), seed(seed_) {
    if (out_dir.empty()) throw std::runtime_error("cli: --out directory is required");
    std::filesystem::create_directories(out_dir);
    std::string dump = cfg.dump();
    config_digest =
        hex64(lret::crc64_ecma(reinterpret_cast<const unsigned char*>(dump.data()), dump.size()));
  }

  std::string path(const std::string& name) {
    outputs.push_back(name);
    return out_dir + "/" + name;
  }

  void finish() {
    json run = {{"command", command},
                {"code_version", kVersion},
                {"config_digest", config_digest},
                {"seed", seed},
                {"outputs", outputs},
                {"wall_seconds",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    std::ofstream out(out_dir + "/run.json");
    if (!out) throw std::runtime_error("cli: cannot write " + out_dir + "/run.json");
    out << run.dump(2) << "\n";
  }
};

lret::DatasetManifest manifest_for(const json& cfg, const std::string& flag_manifest,
                                   const lret::LoaderConfig& lc, uint64_t seed) {
  std::string path = flag_manifest.empty()
                         ? require_str(cfg, "dataset.manifest")
                         : flag_manifest;
  lret::DatasetManifest m = lret::load_manifest(path);
  if (lc.class_cap > 0) m = lret::cap_classes(m, lc.class_cap, lret::mix_seed(seed, 0x636170));
  return m;
}

/// Forward a whole split and collect probabilities, labels, and image paths.
struct SplitPredictions {
  lret::Tensor probs;
  std::vector<int> labels;
  std::vector<std::string> paths;
};

SplitPredictions predict_split(lret::Model& model, lret::DataLoader& loader,
                               const std::string& split) {
  std::vector<float> rows;
  SplitPredictions out;
  const int k = model.spec().num_classes;
  auto ep = loader.start_epoch(split, 0);
  while (auto batch = ep->next()) {
    auto r = model.forward(batch->images, lret::Mode::Infer);
    for (size_t i = 0; i < batch->labels.size(); ++i) {
      for (int j = 0; j < k; ++j) rows.push_back(r.probs.at2(int(i), j));
      out.labels.push_back(batch->labels[i]);
      out.paths.push_back(batch->paths[i]);
    }
  }
  out.probs = lret::Tensor::zeros({int(out.labels.size()), k});
  std::copy(rows.begin(), rows.end(), out.probs.data());
  return out;
}

std::vector<std::string> class_names_of(const lret::DatasetManifest& m) {
  std::vector<std::string> names(size_t(m.num_classes()));
  for (const auto& [label, idx] : m.class_index) names[size_t(idx)] = label;
  return names;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const json& cfg, const std::string& out_dir, uint64_t seed, bool seed_set) {
  lret::SynthSpec spec;
  spec.classes = get_or<int>(cfg, "synth.classes", spec.classes);
  spec.per_class = get_or<int>(cfg, "synth.per_class", spec.per_class);
  spec.patch = get_or<int>(cfg, "synth.patch", spec.patch);
  spec.style = get_or<std::string>(cfg, "synth.style", spec.style);
  spec.seed = seed_set ? seed : get_or<uint64_t>(cfg, "synth.seed", 0);
  spec.validate();

  RunRecorder run(out_dir, "synth", cfg, spec.seed);
  lret::DatasetManifest m = lret::synth_generate(spec, out_dir + "/data");
  run.outputs.push_back("data/manifest.csv");
  run.finish();
  std::printf("%s/data/manifest.csv\n", out_dir.c_str());
  return 0;
}

int cmd_train(const json& cfg, const std::string& out_dir, const std::string& flag_manifest,
              uint64_t seed, bool seed_set, bool verbose) {
  uint64_t run_seed = seed_set ? seed : get_or<uint64_t>(cfg, "train.seed", 0);
  RunRecorder run(out_dir, "train", cfg, run_seed);

  lret::ModelSpec spec = model_spec_from_config(cfg);
  lret::LoaderConfig lc = loader_from_config(cfg, run_seed);
  lret::DatasetManifest m = manifest_for(cfg, flag_manifest, lc, run_seed);
  if (m.num_classes() != spec.num_classes) {
    throw std::runtime_error("train: manifest has " + std::to_string(m.num_classes()) +
                             " classes but model.num_classes is " +
                             std::to_string(spec.num_classes));
  }
  lret::Model model(spec, run_seed);
  lret::DataLoader loader(m, lc);

  lret::TrainConfig tc;
  tc.epochs = get_or<int>(cfg, "train.epochs", 10);
  tc.seed = run_seed;
  tc.checkpoint_dir = out_dir;
  tc.train_split = get_or<std::string>(cfg, "train.train_split", "train");
  tc.val_split = get_or<std::string>(cfg, "train.val_split", "val");
  tc.optimizer.lr = get_or<double>(cfg, "train.lr", tc.optimizer.lr);
  tc.optimizer.beta1 = get_or<double>(cfg, "train.beta1", tc.optimizer.beta1);
  tc.optimizer.beta2 = get_or<double>(cfg, "train.beta2", tc.optimizer.beta2);
  tc.optimizer.epsilon = get_or<double>(cfg, "train.epsilon", tc.optimizer.epsilon);

  std::vector<float> weights = lret::compute_class_weights(m, tc.train_split);
  lret::TrainResult res = lret::train(model, loader, weights, tc, verbose);
  lret::write_epoch_logs(res.logs, run.path("epochs.csv"));
  run.outputs.push_back("best.lret");
  run.finish();
  std::printf("best epoch %d val_acc %.4f -> %s\n", res.best.epoch, res.best.best_val_accuracy,
              res.checkpoint_path.c_str());
  return 0;
}

/// Group map CSV: header label,group; class labels map onto coarser groups.
std::pair<std::vector<int>, std::vector<std::string>> load_group_map(
    const std::string& path, const lret::DatasetManifest& m) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("group map: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "label,group") {
    throw std::runtime_error("group map: expected header label,group in " + path);
  }
  std::map<std::string, std::string> label_to_group;
  std::vector<std::string> group_names;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("group map: bad line: " + line);
    std::string label = line.substr(0, comma), group = line.substr(comma + 1);
    label_to_group[label] = group;
    if (std::find(group_names.begin(), group_names.end(), group) == group_names.end()) {
      group_names.push_back(group);
    }
  }
  std::vector<int> class_to_group(size_t(m.num_classes()), -1);
  for (const auto& [label, idx] : m.class_index) {
    auto it = label_to_group.find(label);
    if (it == label_to_group.end()) {
      throw std::runtime_error("group map: class " + label + " has no group");
    }
    int g = int(std::find(group_names.begin(), group_names.end(), it->second) -
                group_names.begin());
    class_to_group[size_t(idx)] = g;
  }
  return {class_to_group, group_names};
}

int cmd_eval(const json& cfg, const std::string& out_dir, const std::string& ckpt_path,
             const std::string& flag_manifest, const std::string& split, double tau,
             const std::string& group_map, uint64_t seed) {
  RunRecorder run(out_dir, "eval", cfg, seed);
  lret::Checkpoint ckpt = lret::load_checkpoint(ckpt_path);
  lret::Model model = lret::model_from_checkpoint(ckpt);
  lret::LoaderConfig lc = loader_from_config(cfg, seed);
  lret::DatasetManifest m = manifest_for(cfg, flag_manifest, lc, seed);
  lret::DataLoader loader(m, lc);

  SplitPredictions pred = predict_split(model, loader, split);
  std::vector<std::string> names = class_names_of(m);
  lret::MetricsReport report = lret::compute_metrics(pred.probs, pred.labels, names);

  json out = lret::metrics_to_json(report);
  if (tau > 0.0) {
    lret::ThresholdReport tr = lret::threshold_report(pred.probs, pred.labels, names, tau);
    out["threshold"] = {{"tau", tr.tau},
                        {"coverage", tr.coverage},
                        {"accuracy", tr.accuracy},
                        {"weighted_f1", tr.weighted_f1},
                        {"undefined", tr.undefined}};
  }
  if (!group_map.empty()) {
    auto [class_to_group, group_names] = load_group_map(group_map, m);
    lret::GroupReport gr = lret::group_scores(pred.probs, pred.labels, class_to_group, group_names);
    out["groups"] = lret::metrics_to_json(gr.metrics);
  }
  {
    std::ofstream js(run.path("metrics.json"));
    js << out.dump(2) << "\n";
  }
  lret::write_roc_csv(report, run.path("roc.csv"));
  lret::write_pr_csv(report, run.path("pr.csv"));
  lret::write_confusion_csv(report, run.path("confusion.csv"));
  run.finish();
  std::printf("accuracy %.4f weighted_f1 %.4f (n=%lld)\n", report.accuracy, report.weighted_f1,
              static_cast<long long>(report.n));
  return 0;
}

int cmd_explain(const json& cfg, const std::string& out_dir, const std::string& ckpt_path,
                const std::vector<std::string>& images, const std::string& method, int layer_res,
                int target_class, uint64_t seed) {
  if (method != "gradcam" && method != "gradcampp" && method != "scorecam") {
    throw std::runtime_error("explain: unknown method " + method +
                             " (expected one of gradcam, gradcampp, scorecam)");
  }
  if (images.empty()) throw std::runtime_error("explain: no input images given");
  RunRecorder run(out_dir, "explain", cfg, seed);
  lret::Checkpoint ckpt = lret::load_checkpoint(ckpt_path);
  lret::Model model = lret::model_from_checkpoint(ckpt);

  for (const std::string& img_path : images) {
    lret::Tensor hw = lret::read_image(img_path);
    lret::Tensor img = lret::Tensor::zeros({1, hw.dim(0), hw.dim(1), 3});
    std::copy(hw.data(), hw.data() + hw.size(), img.data());

    int cls = target_class;
    if (cls < 0) {
      auto r = model.forward(img, lret::Mode::Infer);
      cls = lret::argmax_prediction(r.probs, 0);
    }
    lret::CamHeatmap hm;
    if (method == "gradcam") hm = lret::grad_cam(model, img, cls, layer_res);
    if (method == "gradcampp") hm = lret::grad_cam_pp(model, img, cls, layer_res);
    if (method == "scorecam") hm = lret::score_cam(model, img, cls, layer_res);

    std::string stem = std::filesystem::path(img_path).stem().string();
    lret::write_heatmap_overlay(run.path(stem + "_" + method + ".png"), img, hm);
    lret::write_heatmap_csv(run.path(stem + "_" + method + ".csv"), hm);
    if (hm.all_zero) {
      std::fprintf(stderr, "warning: %s produced an all-zero map for %s\n", method.c_str(),
                   img_path.c_str());
    }
  }
  run.finish();
  return 0;
}

int cmd_features(const json& cfg, const std::string& out_dir, const std::string& ckpt_path,
                 const std::string& flag_manifest, int avg_k, bool run_tsne, uint64_t seed) {
  RunRecorder run(out_dir, "features", cfg, seed);
  lret::Checkpoint ckpt = lret::load_checkpoint(ckpt_path);
  lret::Model model = lret::model_from_checkpoint(ckpt);
  lret::LoaderConfig lc = loader_from_config(cfg, seed);
  lret::DatasetManifest m = manifest_for(cfg, flag_manifest, lc, seed);
  lret::DataLoader loader(m, lc);

  std::vector<std::string> splits =
      get_or<std::vector<std::string>>(cfg, "features.splits", {"train", "test"});
  std::vector<lret::FeatureVector> vectors;
  for (const std::string& split : splits) {
    if (m.split_indices(split).empty()) continue;
    auto ep = loader.start_epoch(split, 0);
    while (auto batch = ep->next()) {
      auto fvs = lret::extract_features(model, batch->images, batch->labels, split);
      vectors.insert(vectors.end(), fvs.begin(), fvs.end());
    }
  }
  if (vectors.empty()) throw std::runtime_error("features: no images in requested splits");
  if (avg_k > 1) vectors = lret::average_by_k(vectors, avg_k, seed);

  std::vector<std::string> names = class_names_of(m);
  {
    std::ofstream out(run.path("features.csv"));
    out << "id,label,origin";
    for (size_t d = 0; d < vectors[0].values.size(); ++d) out << ",f" << d;
    out << "\n";
    out.precision(9);
    for (size_t i = 0; i < vectors.size(); ++i) {
      out << i << "," << names[size_t(vectors[i].label)] << "," << vectors[i].origin;
      for (float v : vectors[i].values) out << "," << v;
      out << "\n";
    }
  }

  if (run_tsne) {
    const size_t n = vectors.size(), d = vectors[0].values.size();
    std::vector<double> x(n * d);
    std::vector<std::string> ids, labels;
    for (size_t i = 0; i < n; ++i) {
      for (size_t k = 0; k < d; ++k) x[i * d + k] = vectors[i].values[k];
      ids.push_back(vectors[i].origin + "/" + std::to_string(i));
      labels.push_back(names[size_t(vectors[i].label)]);
    }
    lret::TsneConfig tc;
    tc.perplexity = get_or<double>(cfg, "features.perplexity", tc.perplexity);
    tc.iterations = get_or<int>(cfg, "features.iterations", tc.iterations);
    tc.seed = seed;
    lret::TsneResult res = lret::tsne(x, n, d, tc);
    if (res.perplexity_capped) {
      std::fprintf(stderr, "warning: perplexity capped to %.3f for %zu points\n",
                   res.effective_perplexity, n);
    }
    lret::write_embedding_csv(run.path("embedding.csv"), res, ids, labels);
  }
  run.finish();
  std::printf("%zu vectors -> %s/features.csv\n", vectors.size(), out_dir.c_str());
  return 0;
}

int cmd_bench(const json& cfg, const std::string& out_dir, const std::string& flag_manifest,
              uint64_t seed) {
  RunRecorder run(out_dir, "bench", cfg, seed);
  lret::LoaderConfig base = loader_from_config(cfg, seed);
  lret::DatasetManifest m = manifest_for(cfg, flag_manifest, base, seed);
  std::string split = get_or<std::string>(cfg, "bench.split", "train");
  int epochs = get_or<int>(cfg, "bench.epochs", 2);

  std::ofstream out(run.path("bench.csv"));
  out << "cache,workers,prefetch,epoch,wall_ms,decode_ms,wait_ms,cache_hits,order_digest\n";
  auto run_variant = [&](bool cache, int workers, int prefetch) {
    lret::LoaderConfig lc = base;
    lc.cache = cache;
    lc.decode_workers = workers;
    lc.prefetch_depth = prefetch;
    lret::DataLoader loader(m, lc);
    for (int e = 0; e < epochs; ++e) {
      uint64_t digest = 0;
      auto ep = loader.start_epoch(split, e);
      while (auto batch = ep->next()) {
        for (const std::string& p : batch->paths) {
          digest = lret::crc64_ecma(reinterpret_cast<const unsigned char*>(p.data()), p.size(),
                                    digest);
        }
      }
      const auto& st = ep->stats();
      out << (cache ? 1 : 0) << "," << workers << "," << prefetch << "," << e << "," << st.wall_ms
          << "," << st.decode_ms << "," << st.wait_ms << "," << st.cache_hits << ","
          << hex64(digest) << "\n";
    }
  };
  for (bool cache : {false, true}) {
    for (int workers : {1, 2, 4}) run_variant(cache, workers, base.prefetch_depth);
  }
  for (int prefetch : {1, 8}) run_variant(true, 1, prefetch);
  run.finish();
  std::printf("%s/bench.csv\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned-resizer classification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  uint64_t seed = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--out", out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "seed override");
  app.add_flag("--verbose", verbose, "progress output");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int sy_classes = -1, sy_per_class = -1, sy_patch = -1;
  std::string sy_style;
  synth->add_option("--classes", sy_classes, "number of classes");
  synth->add_option("--per-class", sy_per_class, "images per class");
  synth->add_option("--patch", sy_patch, "image side length");
  synth->add_option("--style", sy_style, "coarse | fine");

  auto* train = app.add_subcommand("train", "train a model from config");
  std::string tr_manifest, tr_resizer;
  train->add_option("--manifest", tr_manifest, "dataset manifest CSV");
  train->add_option("--resizer", tr_resizer, "none | static | hfe | glr");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_manifest, ev_split = "test", ev_group_map;
  double ev_tau = 0.0;
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", ev_manifest, "dataset manifest CSV");
  eval->add_option("--split", ev_split, "split to evaluate");
  eval->add_option("--tau", ev_tau, "confidence threshold for the sub-report");
  eval->add_option("--group-map", ev_group_map, "label,group CSV");

  auto* explain = app.add_subcommand("explain", "class activation maps");
  std::string ex_ckpt, ex_method = "gradcam";
  int ex_layer = 32, ex_class = -1;
  std::vector<std::string> ex_images;
  explain->add_option("--checkpoint", ex_ckpt, "model checkpoint")->required();
  explain->add_option("--method", ex_method, "gradcam | gradcampp | scorecam");
  explain->add_option("--layer", ex_layer, "layer resolution (8, 16, 32, 64)");
  explain->add_option("--class", ex_class, "target class (default: predicted)");
  explain->add_option("images", ex_images, "input images");

  auto* features = app.add_subcommand("features", "deep features and t-SNE");
  std::string fe_ckpt, fe_manifest;
  int fe_avg_k = 1;
  bool fe_tsne = false;
  features->add_option("--checkpoint", fe_ckpt, "model checkpoint")->required();
  features->add_option("--manifest", fe_manifest, "dataset manifest CSV");
  features->add_option("--avg-k", fe_avg_k, "average groups of k per class (1 = raw)");
  features->add_flag("--tsne", fe_tsne, "also embed with t-SNE");

  auto* bench = app.add_subcommand("bench", "data pipeline timing");
  std::string be_manifest;
  bench->add_option("--manifest", be_manifest, "dataset manifest CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = load_config(config_path);
    if (out_dir.empty()) out_dir = get_or<std::string>(cfg, "outputs", "");
    bool seed_set = seed_opt->count() > 0;
    uint64_t eff_seed = seed_set ? seed : get_or<uint64_t>(cfg, "seed", 0);

    if (synth->parsed()) {
      if (sy_classes > 0) cfg["synth"]["classes"] = sy_classes;
      if (sy_per_class > 0) cfg["synth"]["per_class"] = sy_per_class;
      if (sy_patch > 0) cfg["synth"]["patch"] = sy_patch;
      if (!sy_style.empty()) cfg["synth"]["style"] = sy_style;
      return cmd_synth(cfg, out_dir, seed, seed_set);
    }
    if (train->parsed()) {
      if (!tr_resizer.empty()) cfg["model"]["resizer"] = tr_resizer;
      return cmd_train(cfg, out_dir, tr_manifest, seed, seed_set, verbose);
    }
    if (eval->parsed()) {
      double tau = ev_tau > 0.0 ? ev_tau : get_or<double>(cfg, "eval.tau", 0.0);
      std::string gm = ev_group_map.empty() ? get_or<std::string>(cfg, "eval.group_map", "")
                                            : ev_group_map;
      return cmd_eval(cfg, out_dir, ev_ckpt, ev_manifest, ev_split, tau, gm, eff_seed);
    }
    if (explain->parsed()) {
      if (ex_images.empty()) {
        ex_images = get_or<std::vector<std::string>>(cfg, "explain.images", {});
      }
      return cmd_explain(cfg, out_dir, ex_ckpt, ex_images, ex_method, ex_layer, ex_class,
                         eff_seed);
    }
    if (features->parsed()) {
      return cmd_features(cfg, out_dir, fe_ckpt, fe_manifest, fe_avg_k, fe_tsne, eff_seed);
    }
    if (bench->parsed()) return cmd_bench(cfg, out_dir, be_manifest, eff_seed);
    throw std::runtime_error("cli: no subcommand");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 1;
  }
}
