#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/backbone.hpp"
#include "lret/layers.hpp"
#include "lret/ops.hpp"
#include "lret/resizer.hpp"

namespace lret {

enum class ResizerKind { None, Static, Hfe, Glr };

inline std::string to_string(ResizerKind k) {
  switch (k) {
    case ResizerKind::None: return "none";
    case ResizerKind::Static: return "static";
    case ResizerKind::Hfe: return "hfe";
    case ResizerKind::Glr: return "glr";
  }
  return "none";
}

inline ResizerKind resizer_kind_from_string(const std::string& s) {
  if (s == "none") return ResizerKind::None;
  if (s == "static") return ResizerKind::Static;
  if (s == "hfe") return ResizerKind::Hfe;
  if (s == "glr") return ResizerKind::Glr;
  throw std::invalid_argument("unknown resizer kind: " + s);
}

/// Declarative description of resizer + backbone + head.
struct ModelSpec {
  int input_h = 1024;
  int input_w = 1024;
  ResizerKind resizer = ResizerKind::Hfe;
  HfeSpec hfe;
  GlrSpec glr;
  StaticResizeSpec stat;
  BackboneSpec backbone;
  int num_classes = 2;
  int head_width = 512;
  float dropout_rate = 0.5f;
  bool head_relu = true;

  int backbone_input_h() const {
    switch (resizer) {
      case ResizerKind::Hfe: return hfe.target;
      case ResizerKind::Glr: return glr.target_h;
      case ResizerKind::Static: return stat.target_h;
      case ResizerKind::None: return input_h;
    }
    return input_h;
  }
  int backbone_input_w() const {
    switch (resizer) {
      case ResizerKind::Hfe: return hfe.target;
      case ResizerKind::Glr: return glr.target_w;
      case ResizerKind::Static: return stat.target_w;
      case ResizerKind::None: return input_w;
    }
    return input_w;
  }
  int resizer_channels() const { return resizer == ResizerKind::Hfe ? hfe.unit2_channels : 3; }

  /// FEN output contract (fh, fw, fc).
  std::vector<int> feature_map_size() const {
    int f = backbone.downsample_factor();
    return {backbone_input_h() / f, backbone_input_w() / f, backbone.feature_channels()};
  }

  void validate() const {
    backbone.validate();
    if (num_classes < 2) throw std::invalid_argument("ModelSpec: need at least 2 classes");
    if (head_width < 1) throw std::invalid_argument("ModelSpec: bad head width");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f) {
      throw std::invalid_argument("ModelSpec: dropout rate must be in [0,1)");
    }
    if (resizer == ResizerKind::Hfe) hfe.validate();
    if (resizer == ResizerKind::Glr) glr.validate();
    if (backbone.input_channels != resizer_channels()) {
      throw std::invalid_argument("ModelSpec: backbone.stem.conv expects " +
                                  std::to_string(backbone.input_channels) +
                                  " input channels, resizer produces " +
                                  std::to_string(resizer_channels()));
    }
    int f = backbone.downsample_factor();
    if (backbone_input_h() / f < 1 || backbone_input_w() / f < 1) {
      throw std::invalid_argument("ModelSpec: backbone.stage" +
                                  std::to_string(backbone.stages() - 1) +
                                  " would produce an empty feature map");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{
      {"input_h", s.input_h},
      {"input_w", s.input_w},
      {"resizer", to_string(s.resizer)},
      {"hfe",
       {{"target", s.hfe.target},
        {"unit1_channels", s.hfe.unit1_channels},
        {"unit2_channels", s.hfe.unit2_channels},
        {"use_subsampling_pool", s.hfe.use_subsampling_pool},
        {"post_norm", s.hfe.post_norm}}},
      {"glr",
       {{"target_h", s.glr.target_h},
        {"target_w", s.glr.target_w},
        {"filters", s.glr.filters},
        {"residual_blocks", s.glr.residual_blocks},
        {"leaky_slope", s.glr.leaky_slope}}},
      {"static", {{"target_h", s.stat.target_h}, {"target_w", s.stat.target_w}}},
      {"backbone",
       {{"input_channels", s.backbone.input_channels},
        {"stage_channels", s.backbone.stage_channels},
        {"blocks_per_stage", s.backbone.blocks_per_stage},
        {"residual", s.backbone.residual}}},
      {"num_classes", s.num_classes},
      {"head_width", s.head_width},
      {"dropout_rate", s.dropout_rate},
      {"head_relu", s.head_relu}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.input_h = j.at("input_h").get<int>();
  s.input_w = j.at("input_w").get<int>();
  s.resizer = resizer_kind_from_string(j.at("resizer").get<std::string>());
  const auto& h = j.at("hfe");
  s.hfe.input_h = s.input_h;
  s.hfe.input_w = s.input_w;
  s.hfe.target = h.at("target").get<int>();
  s.hfe.unit1_channels = h.at("unit1_channels").get<int>();
  s.hfe.unit2_channels = h.at("unit2_channels").get<int>();
  s.hfe.use_subsampling_pool = h.at("use_subsampling_pool").get<bool>();
  s.hfe.post_norm = h.at("post_norm").get<bool>();
  const auto& g = j.at("glr");
  s.glr.input_h = s.input_h;
  s.glr.input_w = s.input_w;
  s.glr.target_h = g.at("target_h").get<int>();
  s.glr.target_w = g.at("target_w").get<int>();
  s.glr.filters = g.at("filters").get<int>();
  s.glr.residual_blocks = g.at("residual_blocks").get<int>();
  s.glr.leaky_slope = g.at("leaky_slope").get<float>();
  const auto& st = j.at("static");
  s.stat.target_h = st.at("target_h").get<int>();
  s.stat.target_w = st.at("target_w").get<int>();
  const auto& b = j.at("backbone");
  s.backbone.input_channels = b.at("input_channels").get<int>();
  s.backbone.stage_channels = b.at("stage_channels").get<std::vector<int>>();
  s.backbone.blocks_per_stage = b.at("blocks_per_stage").get<std::vector<int>>();
  s.backbone.residual = b.at("residual").get<bool>();
  s.num_classes = j.at("num_classes").get<int>();
  s.head_width = j.at("head_width").get<int>();
  s.dropout_rate = j.at("dropout_rate").get<float>();
  s.head_relu = j.at("head_relu").get<bool>();
}

struct ForwardResult {
  Tape tape;
  Value logits;
  Tensor probs;
  Value resized;            // resizer output (null for static/none)
  std::map<int, Value> taps;  // backbone downsample factor -> stage output
  Value fen;                // final feature map

  /// Maps a reference-resolution layer name (8, 16, 32, 64) to the
  /// corresponding backbone stage output (factors 32, 16, 8, 4).
  Value tap_for_layer_res(int layer_res) const {
    if (256 % layer_res != 0) throw std::invalid_argument("invalid layer resolution");
    int factor = 256 / layer_res;
    auto it = taps.find(factor);
    if (it == taps.end()) {
      throw std::invalid_argument("layer resolution " + std::to_string(layer_res) +
                                  " has no tap in this backbone");
    }
    return it->second;
  }
};

/// End-to-end classifier: resizer -> backbone -> GAP -> dense -> (relu) ->
/// dropout -> dense -> softmax.
class Model {
 public:
  Model(const ModelSpec& spec, uint64_t seed) : spec_(spec), seed_(seed) {
    spec_.validate();
    Rng rng(mix_seed(seed, 0x4c524554 /* "LRET" */));
    if (spec_.resizer == ResizerKind::Hfe) hfe_ = Hfe(params_, spec_.hfe, rng);
    if (spec_.resizer == ResizerKind::Glr) glr_ = Glr(params_, spec_.glr, rng);
    backbone_ = Backbone(params_, spec_.backbone, rng);
    const int fc = spec_.backbone.feature_channels();
    head1_ = DenseLayer(params_, "head.dense1", fc, spec_.head_width, rng);
    head2_ = DenseLayer(params_, "head.dense2", spec_.head_width, spec_.num_classes, rng);
  }

  ForwardResult forward(const Tensor& batch, Mode mode, Rng* dropout_rng = nullptr) {
    if (batch.rank() != 4 || batch.dim(1) != spec_.input_h || batch.dim(2) != spec_.input_w ||
        batch.dim(3) != 3) {
      throw std::invalid_argument("Model::forward: batch shape " + batch.shape_str() +
                                  " does not match spec input " + std::to_string(spec_.input_h) +
                                  "x" + std::to_string(spec_.input_w) + "x3");
    }
    ForwardResult r;
    r.tape.mode = mode;
    if (mode == Mode::Train && spec_.dropout_rate > 0.0f && !dropout_rng) {
      throw std::invalid_argument("Model::forward: train mode with dropout needs an RNG");
    }
    r.tape.rng = dropout_rng ? dropout_rng : &fallback_rng_;

    Value x;
    switch (spec_.resizer) {
      case ResizerKind::Hfe:
        x = hfe_(r.tape, make_constant(batch, "input"));
        r.resized = x;
        break;
      case ResizerKind::Glr:
        x = glr_(r.tape, make_constant(batch, "input"));
        r.resized = x;
        break;
      case ResizerKind::Static:
        x = make_constant(static_resize(batch, spec_.stat), "static_resize");
        break;
      case ResizerKind::None:
        x = make_constant(batch, "input");
        break;
    }
    check_finite(x, "resizer");

    x = backbone_(r.tape, x, &r.taps);
    for (const auto& [factor, tap] : r.taps) {
      check_finite(tap, "backbone.factor" + std::to_string(factor));
    }
    r.fen = x;

    Value h = global_avg_pool(x, "gap");
    h = head1_(r.tape, h);
    if (spec_.head_relu) h = relu(h, "head.relu");
    h = dropout(h, spec_.dropout_rate, mode, *r.tape.rng, "head.dropout");
    r.logits = head2_(r.tape, h);
    check_finite(r.logits, "head.dense2");
    r.probs = softmax_rows(r.logits->val);
    return r;
  }

  const ModelSpec& spec() const { return spec_; }
  uint64_t seed() const { return seed_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  int64_t count_params() const { return params_.trainable_size(); }

  /// Analytic multiply-accumulate estimate for one forward pass of a single
  /// image. Resize ops are counted at 4 MACs per output element.
  int64_t estimate_flops() const {
    int64_t macs = 0;
    auto conv = [&](int h, int w, int stride, int kh, int kw, int cin, int cout, int& oh,
                    int& ow) {
      oh = detail::same_out(h, stride);
      ow = detail::same_out(w, stride);
      macs += int64_t(oh) * ow * kh * kw * cin * cout;
    };
    int h = spec_.input_h, w = spec_.input_w, oh = 0, ow = 0;
    if (spec_.resizer == ResizerKind::Hfe) {
      const auto& s = spec_.hfe;
      conv(h, w, 1, 3, 3, 3, s.unit1_channels, oh, ow);
      conv(oh, ow, 2, 3, 3, s.unit1_channels, s.unit1_channels, oh, ow);
      if (s.use_subsampling_pool) {
        oh = detail::same_out(oh, 2);
        ow = detail::same_out(ow, 2);
        macs += int64_t(oh) * ow * s.unit1_channels * 9;
      }
      conv(oh, ow, 1, 3, 3, s.unit1_channels, s.unit2_channels, oh, ow);
      conv(oh, ow, 1, 3, 3, s.unit2_channels, s.unit2_channels, oh, ow);
      if (oh != s.target || ow != s.target) {
        macs += int64_t(s.target) * s.target * s.unit2_channels * 4;
      }
      h = s.target;
      w = s.target;
    } else if (spec_.resizer == ResizerKind::Glr) {
      const auto& s = spec_.glr;
      conv(h, w, 1, 7, 7, 3, s.filters, oh, ow);
      conv(oh, ow, 1, 1, 1, s.filters, s.filters, oh, ow);
      macs += int64_t(s.target_h) * s.target_w * s.filters * 4;  // feature resize
      macs += int64_t(s.target_h) * s.target_w * 3 * 4;          // skip resize
      int th = s.target_h, tw = s.target_w;
      for (int b = 0; b < s.residual_blocks; ++b) {
        conv(th, tw, 1, 3, 3, s.filters, s.filters, oh, ow);
        conv(th, tw, 1, 3, 3, s.filters, s.filters, oh, ow);
      }
      conv(th, tw, 1, 3, 3, s.filters, s.filters, oh, ow);
      conv(th, tw, 1, 7, 7, s.filters, 3, oh, ow);
      h = th;
      w = tw;
    } else if (spec_.resizer == ResizerKind::Static) {
      macs += int64_t(spec_.stat.target_h) * spec_.stat.target_w * 3 * 4;
      h = spec_.stat.target_h;
      w = spec_.stat.target_w;
    }
    const auto& b = spec_.backbone;
    int cin = b.input_channels;
    conv(h, w, 2, 3, 3, cin, b.stage_channels[0], oh, ow);
    h = oh;
    w = ow;
    cin = b.stage_channels[0];
    for (int s = 0; s < b.stages(); ++s) {
      int ch = b.stage_channels[static_cast<size_t>(s)];
      conv(h, w, 2, 3, 3, cin, ch, oh, ow);
      h = oh;
      w = ow;
      for (int blk = 0; blk < b.blocks_per_stage[static_cast<size_t>(s)]; ++blk) {
        conv(h, w, 1, 3, 3, ch, ch, oh, ow);
        conv(h, w, 1, 3, 3, ch, ch, oh, ow);
      }
      cin = ch;
    }
    macs += int64_t(h) * w * cin;                               // GAP
    macs += int64_t(cin) * spec_.head_width;                    // dense1
    macs += int64_t(spec_.head_width) * spec_.num_classes;      // dense2
    return macs;
  }

 private:
  static void check_finite(const Value& v, const std::string& where) {
    if (!v->val.all_finite()) {
      throw std::runtime_error("non-finite activation at layer: " +
                               (v->tag.empty() ? where : v->tag));
    }
  }

  ModelSpec spec_;
  uint64_t seed_ = 0;
  Rng fallback_rng_{0};  // only reached by dropout in infer/rate-0 paths
  ParamStore params_;
  Hfe hfe_;
  Glr glr_;
  Backbone backbone_;
  DenseLayer head1_, head2_;
};

inline Model build_model(const ModelSpec& spec, uint64_t seed) { return Model(spec, seed); }

}  // namespace lret
