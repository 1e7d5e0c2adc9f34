#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lret/layers.hpp"
#include "lret/ops.hpp"
#include "lret/params.hpp"

namespace lret {

/// Convolutional resizer embedding a large patch into a (T,T,unit2_channels)
/// feature space. Unit1 downsamples (stride-2 conv, optional max-pool), Unit2
/// widens the channel dimension at stride 1.
struct HfeSpec {
  int input_h = 1024;
  int input_w = 1024;
  int target = 256;  // T
  int unit1_channels = 4;
  int unit2_channels = 8;
  bool use_subsampling_pool = true;
  bool post_norm = true;  // batch_norm+relu after Unit2 (ablation toggle)

  void validate() const {
    if (target < 1) throw std::invalid_argument("HfeSpec: target must be positive");
    if (target > input_h || target > input_w) {
      throw std::invalid_argument("HfeSpec: target larger than input");
    }
    if (unit1_channels < 1 || unit2_channels < 1) {
      throw std::invalid_argument("HfeSpec: channel counts must be positive");
    }
  }
};

class Hfe {
 public:
  Hfe() = default;
  Hfe(ParamStore& ps, const HfeSpec& spec, Rng& rng, const std::string& prefix = "hfe")
      : spec_(spec) {
    spec_.validate();
    conv1_ = Conv2dLayer(ps, prefix + ".unit1.conv1", 3, 3, 3, spec.unit1_channels, 1, rng);
    conv2_ = Conv2dLayer(ps, prefix + ".unit1.conv2", 3, 3, spec.unit1_channels,
                         spec.unit1_channels, 2, rng);
    bn1_ = BatchNormLayer(ps, prefix + ".unit1.bn", spec.unit1_channels);
    conv3_ = Conv2dLayer(ps, prefix + ".unit2.conv1", 3, 3, spec.unit1_channels,
                         spec.unit2_channels, 1, rng);
    conv4_ = Conv2dLayer(ps, prefix + ".unit2.conv2", 3, 3, spec.unit2_channels,
                         spec.unit2_channels, 1, rng);
    if (spec.post_norm) bn2_ = BatchNormLayer(ps, prefix + ".unit2.bn", spec.unit2_channels);
  }

  Value operator()(Tape& tape, Value x) const {
    x = conv1_(tape, x);
    x = conv2_(tape, x);
    x = bn1_(tape, x);
    x = relu(x, "hfe.unit1.relu");
    if (spec_.use_subsampling_pool) x = max_pool(x, 3, 2, Padding::Same, "hfe.unit1.pool");
    x = conv3_(tape, x);
    x = conv4_(tape, x);
    if (spec_.post_norm) {
      x = bn2_(tape, x);
      x = relu(x, "hfe.unit2.relu");
    }
    if (x->val.dim(1) != spec_.target || x->val.dim(2) != spec_.target) {
      x = bilinear_resize(x, spec_.target, spec_.target, "hfe.final_resize");
    }
    return x;
  }

  const HfeSpec& spec() const { return spec_; }

 private:
  HfeSpec spec_;
  Conv2dLayer conv1_, conv2_, conv3_, conv4_;
  BatchNormLayer bn1_, bn2_;
};

/// Learned resizer with a bilinear skip path and a residual learned path;
/// output is (target_h, target_w, 3). With the learned path at zero the
/// module reduces to a plain bilinear resize.
struct GlrSpec {
  int input_h = 1024;
  int input_w = 1024;
  int target_h = 224;
  int target_w = 224;
  int filters = 16;
  int residual_blocks = 2;
  float leaky_slope = 0.2f;

  void validate() const {
    if (target_h < 1 || target_w < 1) throw std::invalid_argument("GlrSpec: bad target");
    if (filters < 1 || residual_blocks < 0) throw std::invalid_argument("GlrSpec: bad layout");
  }
};

class Glr {
 public:
  Glr() = default;
  Glr(ParamStore& ps, const GlrSpec& spec, Rng& rng, const std::string& prefix = "glr")
      : spec_(spec) {
    spec_.validate();
    const int f = spec.filters;
    stem7_ = Conv2dLayer(ps, prefix + ".stem7", 7, 7, 3, f, 1, rng);
    stem1_ = Conv2dLayer(ps, prefix + ".stem1", 1, 1, f, f, 1, rng);
    stem_bn_ = BatchNormLayer(ps, prefix + ".stem_bn", f);
    for (int b = 0; b < spec.residual_blocks; ++b) {
      std::string bp = prefix + ".block" + std::to_string(b);
      blocks_.push_back({Conv2dLayer(ps, bp + ".conv1", 3, 3, f, f, 1, rng),
                         BatchNormLayer(ps, bp + ".bn1", f),
                         Conv2dLayer(ps, bp + ".conv2", 3, 3, f, f, 1, rng),
                         BatchNormLayer(ps, bp + ".bn2", f)});
    }
    tail_conv_ = Conv2dLayer(ps, prefix + ".tail_conv", 3, 3, f, f, 1, rng);
    tail_bn_ = BatchNormLayer(ps, prefix + ".tail_bn", f);
    out_conv_ = Conv2dLayer(ps, prefix + ".out_conv", 7, 7, f, 3, 1, rng);
  }

  Value operator()(Tape& tape, const Value& input) const {
    const float s = spec_.leaky_slope;
    Value skip = bilinear_resize(input, spec_.target_h, spec_.target_w, "glr.skip_resize");
    Value x = stem7_(tape, input);
    x = leaky_relu(x, s, "glr.stem7.lrelu");
    x = stem1_(tape, x);
    x = leaky_relu(x, s, "glr.stem1.lrelu");
    x = stem_bn_(tape, x);
    Value r = bilinear_resize(x, spec_.target_h, spec_.target_w, "glr.feature_resize");
    x = r;
    for (size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      Value y = blk.conv1(tape, x);
      y = blk.bn1(tape, y);
      y = leaky_relu(y, s, "glr.block.lrelu");
      y = blk.conv2(tape, y);
      y = blk.bn2(tape, y);
      x = add(x, y, "glr.block.skip");
    }
    x = tail_conv_(tape, x);
    x = tail_bn_(tape, x);
    x = add(x, r, "glr.tail_skip");
    x = out_conv_(tape, x);
    return add(x, skip, "glr.output");
  }

  const GlrSpec& spec() const { return spec_; }

 private:
  struct Block {
    Conv2dLayer conv1;
    BatchNormLayer bn1;
    Conv2dLayer conv2;
    BatchNormLayer bn2;
  };
  GlrSpec spec_;
  Conv2dLayer stem7_, stem1_, tail_conv_, out_conv_;
  BatchNormLayer stem_bn_, tail_bn_;
  std::vector<Block> blocks_;
};

/// Non-learned bilinear preprocessing, excluded from backward.
struct StaticResizeSpec {
  int target_h = 256;
  int target_w = 256;
};

inline Tensor static_resize(const Tensor& input, const StaticResizeSpec& spec) {
  return bilinear_resize_tensor(input, spec.target_h, spec.target_w);
}

}  // namespace lret
