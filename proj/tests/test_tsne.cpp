#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "lret/features.hpp"
#include "lret/tsne.hpp"
#include "test_util.hpp"

using namespace lret;
using testutil::random_tensor;

namespace {

// two well-separated Gaussian clusters in D dimensions
std::pair<std::vector<double>, std::vector<int>> two_clusters(size_t n, size_t d, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n * d);
  std::vector<int> label(n);
  for (size_t i = 0; i < n; ++i) {
    label[i] = i < n / 2 ? 0 : 1;
    double center = label[i] == 0 ? -10.0 : 10.0;
    for (size_t k = 0; k < d; ++k) x[i * d + k] = center + rng.normal();
  }
  return {x, label};
}

double silhouette(const std::vector<double>& y, const std::vector<int>& label) {
  const size_t n = label.size();
  auto dist = [&](size_t i, size_t j) {
    double dx = y[i * 2] - y[j * 2], dy = y[i * 2 + 1] - y[j * 2 + 1];
    return std::sqrt(dx * dx + dy * dy);
  };
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double same = 0.0, other = 0.0;
    size_t n_same = 0, n_other = 0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (label[j] == label[i]) {
        same += dist(i, j);
        ++n_same;
      } else {
        other += dist(i, j);
        ++n_other;
      }
    }
    double a = same / double(n_same), b = other / double(n_other);
    total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

std::vector<FeatureVector> make_vectors(int label, int count, float fill, size_t dim = 4) {
  std::vector<FeatureVector> out;
  for (int i = 0; i < count; ++i) {
    FeatureVector fv;
    fv.label = label;
    fv.values.assign(dim, fill);
    out.push_back(fv);
  }
  return out;
}

}  // namespace

TEST_CASE("two separated clusters stay separated in the embedding") {
  auto [x, label] = two_clusters(120, 10, 42);
  TsneConfig cfg;
  cfg.seed = 7;
  TsneResult res = tsne(x, 120, 10, cfg);
  REQUIRE(silhouette(res.coords, label) > 0.5);
}

TEST_CASE("KL divergence settles monotonically after exaggeration ends") {
  auto [x, label] = two_clusters(120, 10, 43);
  (void)label;
  TsneConfig cfg;
  cfg.seed = 3;
  TsneResult res = tsne(x, 120, 10, cfg);
  REQUIRE(res.kl_history.size() == 300);
  for (size_t i = 200; i + 10 < res.kl_history.size(); ++i) {
    REQUIRE(res.kl_history[i + 10] <= res.kl_history[i] + 1e-6);
  }
}

TEST_CASE("same seed gives identical coordinates") {
  auto [x, label] = two_clusters(60, 5, 44);
  (void)label;
  TsneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.seed = 9;
  TsneResult a = tsne(x, 60, 5, cfg);
  TsneResult b = tsne(x, 60, 5, cfg);
  REQUIRE(a.coords == b.coords);
}

TEST_CASE("affinity diagnostics hold") {
  auto [x, label] = two_clusters(90, 6, 45);
  (void)label;
  TsneConfig cfg;
  cfg.perplexity = 20.0;
  cfg.seed = 1;
  cfg.iterations = 5;
  TsneResult res = tsne(x, 90, 6, cfg);
  REQUIRE(res.max_p_asymmetry == 0.0);
  for (double s : res.conditional_row_sums) REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
  for (double p : res.realized_perplexities) {
    REQUIRE(p == Catch::Approx(res.effective_perplexity).margin(1e-3));
  }
}

TEST_CASE("oversized perplexity is capped and flagged") {
  auto [x, label] = two_clusters(30, 4, 46);
  (void)label;
  TsneConfig cfg;
  cfg.perplexity = 40.0;
  cfg.iterations = 5;
  TsneResult res = tsne(x, 30, 4, cfg);
  REQUIRE(res.perplexity_capped);
  REQUIRE(res.effective_perplexity == Catch::Approx(29.0 / 3.0));
}

TEST_CASE("duplicate points are jittered and flagged") {
  auto [x, label] = two_clusters(40, 4, 47);
  (void)label;
  for (size_t k = 0; k < 4; ++k) x[1 * 4 + k] = x[0 * 4 + k];
  TsneConfig cfg;
  cfg.perplexity = 10.0;
  cfg.iterations = 5;
  TsneResult res = tsne(x, 40, 4, cfg);
  REQUIRE(res.duplicates_jittered);
  for (double v : res.coords) REQUIRE(std::isfinite(v));
}

TEST_CASE("tsne input validation") {
  std::vector<double> x(12, 0.0);
  REQUIRE_THROWS_AS(tsne(x, 3, 4), std::invalid_argument);
  REQUIRE_THROWS_AS(tsne(x, 5, 4), std::invalid_argument);
  TsneConfig bad;
  bad.iterations = 0;
  std::vector<double> ok(16, 0.0);
  REQUIRE_THROWS_AS(tsne(ok, 4, 4, bad), std::invalid_argument);
}

TEST_CASE("embedding CSV has the id,label,x,y layout") {
  auto [x, label] = two_clusters(20, 3, 48);
  (void)label;
  TsneConfig cfg;
  cfg.perplexity = 5.0;
  cfg.iterations = 10;
  TsneResult res = tsne(x, 20, 3, cfg);
  std::vector<std::string> ids, labels;
  for (int i = 0; i < 20; ++i) {
    ids.push_back("img" + std::to_string(i));
    labels.push_back(i < 10 ? "a" : "b");
  }
  auto dir = std::filesystem::temp_directory_path() / "lret_tsne_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "embed.csv").string();
  write_embedding_csv(path, res, ids, labels);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == "id,label,x,y");
  int rows = 0;
  while (std::getline(in, line)) {
    REQUIRE(std::count(line.begin(), line.end(), ',') == 3);
    ++rows;
  }
  REQUIRE(rows == 20);
  std::filesystem::remove_all(dir);
}

TEST_CASE("feature vectors are the GAP of the final feature map") {
  ModelSpec spec;
  spec.input_h = spec.input_w = 32;
  spec.resizer = ResizerKind::None;
  spec.backbone.input_channels = 3;
  spec.backbone.stage_channels = {6};
  spec.backbone.blocks_per_stage = {1};
  spec.num_classes = 2;
  spec.head_width = 6;
  spec.dropout_rate = 0.0f;
  Model model(spec, 5);

  Rng rng(2);
  Tensor one = random_tensor({1, 32, 32, 3}, rng, 0.0, 1.0);
  Tensor batch = Tensor::zeros({2, 32, 32, 3});
  for (int64_t i = 0; i < one.size(); ++i) {
    batch[i] = one[i];
    batch[one.size() + i] = one[i];
  }
  auto fvs = extract_features(model, batch, {0, 1}, "test");
  REQUIRE(fvs.size() == 2);
  REQUIRE(int(fvs[0].values.size()) == spec.backbone.feature_channels());
  REQUIRE(fvs[0].label == 0);
  REQUIRE(fvs[1].label == 1);
  REQUIRE(fvs[0].origin == "test");
  REQUIRE(fvs[0].values == fvs[1].values);  // duplicate image, identical GAP
  for (float v : fvs[0].values) REQUIRE(v >= 0.0f);  // FEN ends in relu

  // double-precision GAP of the tap itself
  Tensor fen = model.forward(batch, Mode::Infer).fen->val;
  for (int k = 0; k < fen.dim(3); ++k) {
    double s = 0.0;
    for (int y = 0; y < fen.dim(1); ++y) {
      for (int x = 0; x < fen.dim(2); ++x) s += fen.at4(0, y, x, k);
    }
    s /= double(fen.dim(1)) * fen.dim(2);
    REQUIRE(double(fvs[0].values[size_t(k)]) == Catch::Approx(s).margin(1e-6));
  }

  REQUIRE_THROWS_AS(extract_features(model, batch, {0}), std::invalid_argument);
}

TEST_CASE("average_by_k partitions each class into groups of k") {
  auto vecs = make_vectors(0, 6, 1.0f);
  auto avg = average_by_k(vecs, 3, 11);
  REQUIRE(avg.size() == 2);
  for (const auto& fv : avg) {
    REQUIRE(fv.label == 0);
    for (float v : fv.values) REQUIRE(v == 1.0f);  // identical inputs, identical mean
  }

  // remainder dropped: 7 vectors, k=2 -> 3 groups
  auto vecs7 = make_vectors(1, 7, 2.0f);
  REQUIRE(average_by_k(vecs7, 2, 11).size() == 3);

  // the supported sampling sizes
  auto vecs10 = make_vectors(0, 10, 0.5f);
  for (int k : {2, 3, 5, 10}) {
    auto a = average_by_k(vecs10, k, 1);
    REQUIRE(a.size() == size_t(10 / k));
  }
  REQUIRE_THROWS_AS(average_by_k(vecs10, 4, 1), std::invalid_argument);
}

TEST_CASE("average_by_k computes seeded group means") {
  Rng rng(13);
  std::vector<FeatureVector> vecs;
  for (int i = 0; i < 9; ++i) {
    FeatureVector fv;
    fv.label = i % 2;  // class 0: 5 vectors, class 1: 4 vectors
    fv.values = {float(rng.uniform(-1.0, 1.0)), float(rng.uniform(-1.0, 1.0))};
    vecs.push_back(fv);
  }
  auto a = average_by_k(vecs, 2, 99);
  auto b = average_by_k(vecs, 2, 99);
  REQUIRE(a.size() == 4);  // 5/2 + 4/2 = 2 + 2 groups
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].values == b[i].values);

  // mass check: per class, the sum of group means times k stays within the
  // class total (each vector used at most once)
  for (int cls : {0, 1}) {
    double group_mass = 0.0, class_mass = 0.0;
    for (const auto& fv : a) {
      if (fv.label == cls) group_mass += std::abs(double(fv.values[0]) * 2.0);
    }
    for (const auto& fv : vecs) {
      if (fv.label == cls) class_mass += std::abs(double(fv.values[0]));
    }
    REQUIRE(group_mass <= class_mass + 1e-6);
  }

  REQUIRE_THROWS_WITH(average_by_k(vecs, 5, 1), Catch::Matchers::ContainsSubstring("fewer"));
}
