#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "lret/model.hpp"
#include "oracle_ref.hpp"
#include "test_util.hpp"

using namespace lret;
using testutil::random_tensor;

namespace {

ModelSpec desk_spec(int input, int target, int num_classes,
                    std::vector<int> stages = {8, 16, 32, 64}) {
  ModelSpec s;
  s.input_h = s.input_w = input;
  s.resizer = ResizerKind::Hfe;
  s.hfe.input_h = s.hfe.input_w = input;
  s.hfe.target = target;
  s.backbone.input_channels = 8;
  s.backbone.blocks_per_stage.assign(stages.size(), 1);
  s.backbone.stage_channels = std::move(stages);
  s.num_classes = num_classes;
  s.head_width = 64;
  return s;
}

}  // namespace

TEST_CASE("HFE + factor-32 backbone produces the contracted feature geometry") {
  ModelSpec s = desk_spec(1024, 256, 4);
  REQUIRE(s.feature_map_size() == std::vector<int>{8, 8, 64});
  Model m(s, 1);
  Rng rng(2);
  Tensor batch = random_tensor({1, 1024, 1024, 3}, rng, 0.0, 1.0);
  auto r = m.forward(batch, Mode::Infer);
  REQUIRE(r.fen->val.shape() == std::vector<int>{1, 8, 8, 64});
  REQUIRE(r.probs.shape() == std::vector<int>{1, 4});
}

TEST_CASE("ablation geometry: no resizer at 1024 gives a 32x32 bottleneck") {
  ModelSpec s = desk_spec(1024, 256, 4);
  s.resizer = ResizerKind::None;
  s.backbone.input_channels = 3;
  REQUIRE(s.feature_map_size() == std::vector<int>{32, 32, 64});
  Model m(s, 1);
  Rng rng(3);
  Tensor batch = random_tensor({1, 1024, 1024, 3}, rng, 0.0, 1.0);
  auto r = m.forward(batch, Mode::Infer);
  REQUIRE(r.fen->val.shape() == std::vector<int>{1, 32, 32, 64});
}

TEST_CASE("desk-scale head geometry") {
  ModelSpec s = desk_spec(256, 64, 4);
  REQUIRE(s.feature_map_size() == std::vector<int>{2, 2, 64});
  Model m(s, 7);
  REQUIRE(m.params().get("head.dense1.weight").value.shape() == std::vector<int>{64, 64});
}

TEST_CASE("shape contract violations are reported with the offending layer") {
  ModelSpec s = desk_spec(256, 64, 4);
  s.backbone.input_channels = 3;  // HFE emits 8 channels
  REQUIRE_THROWS_WITH(Model(s, 1), Catch::Matchers::ContainsSubstring("backbone.stem.conv"));
  ModelSpec s2 = desk_spec(256, 32, 4);
  s2.backbone.stage_channels = {8, 8, 8, 8, 8, 8};  // factor 128 > target 32
  s2.backbone.blocks_per_stage = {1, 1, 1, 1, 1, 1};
  REQUIRE_THROWS_WITH(Model(s2, 1), Catch::Matchers::ContainsSubstring("backbone.stage5"));
}

TEST_CASE("inference is deterministic and probs are normalized") {
  ModelSpec s = desk_spec(64, 16, 3, {8, 16});
  Model m(s, 11);
  Rng rng(4);
  Tensor batch = random_tensor({3, 64, 64, 3}, rng, 0.0, 1.0);
  auto a = m.forward(batch, Mode::Infer);
  auto b = m.forward(batch, Mode::Infer);
  for (int64_t i = 0; i < a.probs.size(); ++i) REQUIRE(a.probs[i] == b.probs[i]);
  for (int i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 3; ++j) sum += a.probs.at2(i, j);
    REQUIRE(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("taps cover the factor-4..32 stages and match the FEN contract") {
  ModelSpec s = desk_spec(256, 64, 4);
  Model m(s, 5);
  Rng rng(6);
  Tensor batch = random_tensor({1, 256, 256, 3}, rng, 0.0, 1.0);
  auto r = m.forward(batch, Mode::Infer);
  REQUIRE(r.taps.size() == 4);
  for (int factor : {4, 8, 16, 32}) {
    REQUIRE(r.taps.count(factor) == 1);
    REQUIRE(r.taps[factor]->val.dim(1) == 64 / factor);
  }
  auto fms = s.feature_map_size();
  REQUIRE(r.fen->val.dim(1) == fms[0]);
  REQUIRE(r.fen->val.dim(2) == fms[1]);
  REQUIRE(r.fen->val.dim(3) == fms[2]);
  // layer_res mapping: reference resolution r <-> downsample factor 256/r
  REQUIRE(r.tap_for_layer_res(8) == r.taps[32]);
  REQUIRE(r.tap_for_layer_res(64) == r.taps[4]);
}

TEST_CASE("same seed rebuild yields bit-identical parameters") {
  ModelSpec s = desk_spec(64, 16, 3, {8, 16});
  Model a(s, 123), b(s, 123), c(s, 124);
  bool all_equal = true, any_diff_seed = false;
  a.params().for_each([&](const Param& p) {
    const Param& q = b.params().get(p.name);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      if (p.value[i] != q.value[i]) all_equal = false;
    }
    const Param& r = c.params().get(p.name);
    for (int64_t i = 0; i < p.value.size(); ++i) {
      if (p.value[i] != r.value[i]) any_diff_seed = true;
    }
  });
  REQUIRE(all_equal);
  REQUIRE(any_diff_seed);
}

TEST_CASE("swapping resizers keeps head parameter shapes fixed") {
  ModelSpec hfe_spec = desk_spec(128, 32, 5);
  ModelSpec glr_spec = hfe_spec;
  glr_spec.resizer = ResizerKind::Glr;
  glr_spec.glr.input_h = glr_spec.glr.input_w = 128;
  glr_spec.glr.target_h = glr_spec.glr.target_w = 32;
  glr_spec.backbone.input_channels = 3;
  Model a(hfe_spec, 1), b(glr_spec, 1);
  for (const char* name : {"head.dense1.weight", "head.dense1.bias", "head.dense2.weight",
                           "head.dense2.bias"}) {
    REQUIRE(a.params().get(name).value.shape() == b.params().get(name).value.shape());
  }
  b.params().for_each([](const Param& p) {
    bool ok = p.name.rfind("glr.", 0) == 0 || p.name.rfind("backbone.", 0) == 0 ||
              p.name.rfind("head.", 0) == 0;
    REQUIRE(ok);
  });
}

TEST_CASE("count_params matches hand arithmetic for the dense head") {
  ModelSpec s = desk_spec(256, 64, 74);
  s.head_width = 512;
  Model m(s, 1);
  const Param& w = m.params().get("head.dense2.weight");
  const Param& b = m.params().get("head.dense2.bias");
  REQUIRE(w.value.size() + b.value.size() == 512 * 74 + 74);
  REQUIRE(m.count_params() > 512 * 74 + 74);
}

TEST_CASE("ablation model needs more than twice the FLOPs of the HFE model") {
  ModelSpec hfe_spec = desk_spec(1024, 256, 74);
  hfe_spec.backbone.stage_channels = {16, 32, 64, 128};
  hfe_spec.backbone.blocks_per_stage = {2, 2, 2, 2};
  ModelSpec abl = hfe_spec;
  abl.resizer = ResizerKind::None;
  abl.backbone.input_channels = 3;
  Model a(hfe_spec, 1), b(abl, 1);
  REQUIRE(b.estimate_flops() > 2 * a.estimate_flops());
}

TEST_CASE("NaN activations abort with the layer name") {
  ModelSpec s = desk_spec(64, 16, 3, {8, 16});
  Model m(s, 9);
  Param& k = m.params().get("hfe.unit1.conv1.kernel");
  k.value[0] = std::numeric_limits<float>::quiet_NaN();
  Rng rng(10);
  Tensor batch = random_tensor({1, 64, 64, 3}, rng, 0.0, 1.0);
  REQUIRE_THROWS_WITH(m.forward(batch, Mode::Infer),
                      Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("end-to-end micro model gradients match a double-precision oracle") {
  ModelSpec s;
  s.input_h = s.input_w = 16;
  s.resizer = ResizerKind::Hfe;
  s.hfe.input_h = s.hfe.input_w = 16;
  s.hfe.target = 8;
  s.hfe.use_subsampling_pool = false;
  s.backbone.input_channels = 8;
  s.backbone.stage_channels = {8};
  s.backbone.blocks_per_stage = {1};
  s.num_classes = 3;
  s.head_width = 8;
  s.dropout_rate = 0.0f;
  Model m(s, 31);
  Rng rng(32);
  Tensor batch = random_tensor({2, 16, 16, 3}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 2};
  std::vector<float> weights{1.0f, 1.0f, 1.0f};

  m.params().zero_grads();
  {
    auto r = m.forward(batch, Mode::Train, &rng);
    auto [loss, probs] = softmax_cross_entropy(r.logits, labels, weights);
    backward(loss);
    r.tape.harvest();
  }

  // Double-precision replica of the exact layer composition above. Finite
  // differences on this function avoid the float-precision step floor that
  // makes FD on the float model itself unreliable near ReLU kinks.
  auto pv = [&](const char* name) {
    const Tensor& t = m.params().get(name).value;
    return oracle::Vec(t.data(), t.data() + t.size());
  };
  oracle::Vec xin(batch.data(), batch.data() + batch.size());
  std::vector<double> wts(weights.begin(), weights.end());

  auto oracle_loss = [&]() {
    oracle::Shape4 sh{2, 16, 16, 3};
    auto conv = [&](oracle::Vec v, oracle::Shape4& shp, const std::string& p, int cout,
                    int stride) {
      oracle::Vec out = oracle::conv2d(v, shp, pv((p + ".kernel").c_str()), 3, 3, cout,
                                       pv((p + ".bias").c_str()), stride, true, &shp);
      return out;
    };
    auto bn = [&](oracle::Vec v, const oracle::Shape4& shp, const std::string& p) {
      return oracle::batch_norm_train(v, shp, pv((p + ".gamma").c_str()),
                                      pv((p + ".beta").c_str()), 1e-5);
    };
    oracle::Vec x = conv(xin, sh, "hfe.unit1.conv1", 4, 1);
    x = conv(x, sh, "hfe.unit1.conv2", 4, 2);
    x = oracle::leaky_relu(bn(x, sh, "hfe.unit1.bn"), 0.0);
    x = conv(x, sh, "hfe.unit2.conv1", 8, 1);
    x = conv(x, sh, "hfe.unit2.conv2", 8, 1);
    x = oracle::leaky_relu(bn(x, sh, "hfe.unit2.bn"), 0.0);

    x = conv(x, sh, "backbone.stem.conv", 8, 2);
    x = oracle::leaky_relu(bn(x, sh, "backbone.stem.bn"), 0.0);
    x = conv(x, sh, "backbone.stage0.transition.conv", 8, 2);
    x = oracle::leaky_relu(bn(x, sh, "backbone.stage0.transition.bn"), 0.0);
    oracle::Shape4 bsh = sh;
    oracle::Vec y = conv(x, bsh, "backbone.stage0.block0.conv1", 8, 1);
    y = oracle::leaky_relu(bn(y, bsh, "backbone.stage0.block0.bn1"), 0.0);
    y = conv(y, bsh, "backbone.stage0.block0.conv2", 8, 1);
    y = bn(y, bsh, "backbone.stage0.block0.bn2");
    for (size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    x = oracle::leaky_relu(y, 0.0);

    oracle::Vec h = oracle::global_avg_pool(x, sh);
    h = oracle::dense(h, 2, 8, pv("head.dense1.weight"), 8, pv("head.dense1.bias"));
    h = oracle::leaky_relu(h, 0.0);
    h = oracle::dense(h, 2, 8, pv("head.dense2.weight"), 3, pv("head.dense2.bias"));
    return oracle::softmax_ce(h, 2, 3, labels, wts);
  };

  const double step = 1e-5;
  double worst = 0.0;
  m.params().for_each([&](Param& p) {
    if (!p.trainable) return;
    for (int64_t i = 0; i < p.value.size(); i += std::max<int64_t>(1, p.value.size() / 7)) {
      float keep = p.value[i];
      p.value[i] = float(double(keep) + step);
      double actual_up = double(p.value[i]) - double(keep);
      double fp = oracle_loss();
      p.value[i] = float(double(keep) - step);
      double actual_dn = double(keep) - double(p.value[i]);
      double fm = oracle_loss();
      p.value[i] = keep;
      double fd = (fp - fm) / (actual_up + actual_dn);
      double got = p.grad[i];
      double denom = std::max({std::abs(fd), std::abs(got), 1e-3});
      worst = std::max(worst, std::abs(fd - got) / denom);
    }
  });
  REQUIRE(worst < 1e-2);
}
