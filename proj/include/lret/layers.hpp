#pragma once

#include <string>

#include "lret/ops.hpp"
#include "lret/params.hpp"

namespace lret {

/// Thin layer wrappers: each registers its parameters under a name prefix at
/// construction and replays the corresponding op through a Tape.

struct Conv2dLayer {
  Param* kernel = nullptr;
  Param* bias = nullptr;
  int stride = 1;
  Padding pad = Padding::Same;
  std::string name;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& prefix, int kh, int kw, int cin, int cout,
              int stride_, Rng& rng, Padding pad_ = Padding::Same)
      : stride(stride_), pad(pad_), name(prefix) {
    kernel = &ps.add(prefix + ".kernel", kaiming_uniform({kh, kw, cin, cout}, kh * kw * cin, rng));
    bias = &ps.add(prefix + ".bias", Tensor::zeros({cout}));
  }

  Value operator()(Tape& tape, const Value& x) const {
    return conv2d(x, tape.use(*kernel), tape.use(*bias), stride, pad, name);
  }
};

struct BatchNormLayer {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  Param* running_mean = nullptr;  // non-trainable, checkpointed
  Param* running_var = nullptr;
  float momentum = 0.99f;
  float epsilon = 1e-5f;
  std::string name;

  BatchNormLayer() = default;
  BatchNormLayer(ParamStore& ps, const std::string& prefix, int channels) : name(prefix) {
    gamma = &ps.add(prefix + ".gamma", Tensor::full({channels}, 1.0f));
    beta = &ps.add(prefix + ".beta", Tensor::zeros({channels}));
    running_mean = &ps.add(prefix + ".running_mean", Tensor::zeros({channels}), false);
    running_var = &ps.add(prefix + ".running_var", Tensor::full({channels}, 1.0f), false);
  }

  Value operator()(Tape& tape, const Value& x) const {
    return batch_norm(x, tape.use(*gamma), tape.use(*beta), running_mean->value,
                      running_var->value, tape.mode, momentum, epsilon, name);
  }
};

struct DenseLayer {
  Param* weight = nullptr;
  Param* bias = nullptr;
  std::string name;

  DenseLayer() = default;
  DenseLayer(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng)
      : name(prefix) {
    weight = &ps.add(prefix + ".weight", kaiming_uniform({in, out}, in, rng));
    bias = &ps.add(prefix + ".bias", Tensor::zeros({out}));
  }

  Value operator()(Tape& tape, const Value& x) const {
    return dense(x, tape.use(*weight), tape.use(*bias), name);
  }
};

}  // namespace lret
