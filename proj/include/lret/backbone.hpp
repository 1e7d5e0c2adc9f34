#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/layers.hpp"
#include "lret/ops.hpp"
#include "lret/params.hpp"

namespace lret {

/// Mini feature-extraction backbone: a stride-2 stem followed by one stride-2
/// transition per stage, so the total downsampling factor is 2^(1+stages).
/// The default 4-stage layout gives the x32 reduction the FEN contract needs.
struct BackboneSpec {
  int input_channels = 8;
  std::vector<int> stage_channels{16, 32, 64, 128};
  std::vector<int> blocks_per_stage{1, 1, 1, 1};
  bool residual = true;

  int stages() const { return static_cast<int>(stage_channels.size()); }
  int downsample_factor() const { return 1 << (1 + stages()); }
  int feature_channels() const { return stage_channels.back(); }

  void validate() const {
    if (stage_channels.empty()) throw std::invalid_argument("BackboneSpec: no stages");
    if (blocks_per_stage.size() != stage_channels.size()) {
      throw std::invalid_argument("BackboneSpec: blocks_per_stage size mismatch");
    }
    for (int c : stage_channels) {
      if (c < 1) throw std::invalid_argument("BackboneSpec: bad channel count");
    }
  }
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(ParamStore& ps, const BackboneSpec& spec, Rng& rng,
           const std::string& prefix = "backbone")
      : spec_(spec) {
    spec_.validate();
    const int stem_ch = spec.stage_channels.front();
    stem_conv_ = Conv2dLayer(ps, prefix + ".stem.conv", 3, 3, spec.input_channels, stem_ch, 2, rng);
    stem_bn_ = BatchNormLayer(ps, prefix + ".stem.bn", stem_ch);
    int in_ch = stem_ch;
    for (int s = 0; s < spec.stages(); ++s) {
      std::string sp = prefix + ".stage" + std::to_string(s);
      Stage st;
      const int ch = spec.stage_channels[static_cast<size_t>(s)];
      st.transition = Conv2dLayer(ps, sp + ".transition.conv", 3, 3, in_ch, ch, 2, rng);
      st.transition_bn = BatchNormLayer(ps, sp + ".transition.bn", ch);
      for (int b = 0; b < spec.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
        std::string bp = sp + ".block" + std::to_string(b);
        st.blocks.push_back({Conv2dLayer(ps, bp + ".conv1", 3, 3, ch, ch, 1, rng),
                             BatchNormLayer(ps, bp + ".bn1", ch),
                             Conv2dLayer(ps, bp + ".conv2", 3, 3, ch, ch, 1, rng),
                             BatchNormLayer(ps, bp + ".bn2", ch)});
      }
      stages_.push_back(std::move(st));
      in_ch = ch;
    }
  }

  /// Returns the final feature map; taps maps downsampling factor (relative
  /// to the backbone input) to each stage output.
  Value operator()(Tape& tape, Value x, std::map<int, Value>* taps = nullptr) const {
    x = stem_conv_(tape, x);
    x = stem_bn_(tape, x);
    x = relu(x, "backbone.stem.relu");
    int factor = 2;
    for (const auto& st : stages_) {
      x = st.transition(tape, x);
      x = st.transition_bn(tape, x);
      x = relu(x, "backbone.transition.relu");
      factor *= 2;
      for (const auto& blk : st.blocks) {
        Value y = blk.conv1(tape, x);
        y = blk.bn1(tape, y);
        y = relu(y, "backbone.block.relu1");
        y = blk.conv2(tape, y);
        y = blk.bn2(tape, y);
        if (spec_.residual) y = add(y, x, "backbone.block.skip");
        x = relu(y, "backbone.block.relu2");
      }
      if (taps) (*taps)[factor] = x;
    }
    return x;
  }

  const BackboneSpec& spec() const { return spec_; }

 private:
  struct Block {
    Conv2dLayer conv1;
    BatchNormLayer bn1;
    Conv2dLayer conv2;
    BatchNormLayer bn2;
  };
  struct Stage {
    Conv2dLayer transition;
    BatchNormLayer transition_bn;
    std::vector<Block> blocks;
  };
  BackboneSpec spec_;
  Conv2dLayer stem_conv_;
  BatchNormLayer stem_bn_;
  std::vector<Stage> stages_;
};

}  // namespace lret
