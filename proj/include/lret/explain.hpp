#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/image_io.hpp"
#include "lret/model.hpp"

namespace lret {

struct CamHeatmap {
  Tensor grid;       // (h,w) in [0,1] at feature resolution
  Tensor upsampled;  // (H,W) at input resolution
  int target_class = 0;
  std::string method;
  int layer_res = 0;
  bool all_zero = false;  // the pre-normalization map had no positive mass
};

namespace detail {

inline Tensor minmax_normalize_2d(const Tensor& m, bool* all_zero) {
  float lo = m[0], hi = m[0];
  for (int64_t i = 0; i < m.size(); ++i) {
    lo = std::min(lo, m[i]);
    hi = std::max(hi, m[i]);
  }
  Tensor out = Tensor::zeros(m.shape());
  if (hi <= lo) {
    *all_zero = true;
    return out;
  }
  *all_zero = false;
  for (int64_t i = 0; i < m.size(); ++i) out[i] = (m[i] - lo) / (hi - lo);
  return out;
}

inline Tensor upsample_2d(const Tensor& grid, int out_h, int out_w) {
  Tensor in = Tensor::zeros({1, grid.dim(0), grid.dim(1), 1});
  std::copy(grid.data(), grid.data() + grid.size(), in.data());
  Tensor up = bilinear_resize_tensor(in, out_h, out_w);
  Tensor out = Tensor::zeros({out_h, out_w});
  std::copy(up.data(), up.data() + up.size(), out.data());
  return out;
}

inline CamHeatmap finish_heatmap(Tensor raw, int input_h, int input_w, int target_class,
                                 std::string method, int layer_res) {
  CamHeatmap hm;
  hm.target_class = target_class;
  hm.method = std::move(method);
  hm.layer_res = layer_res;
  hm.grid = minmax_normalize_2d(raw, &hm.all_zero);
  hm.upsampled = upsample_2d(hm.grid, input_h, input_w);
  return hm;
}

/// Shared plumbing: single-image forward in infer mode, gradient of the
/// pre-softmax logit y_c pushed back to the requested tap.
struct TapGrad {
  Tensor activation;  // (1,h,w,C)
  Tensor gradient;    // same shape
};

inline TapGrad tap_gradient(Model& model, const Tensor& image, int target_class, int layer_res) {
  auto r = model.forward(image, Mode::Infer);
  Value tap = r.tap_for_layer_res(layer_res);
  Value y = select_logit(r.logits, 0, target_class, "cam.logit");
  backward(y);
  TapGrad out;
  out.activation = tap->val;
  if (!tap->grad_ready) throw std::logic_error("cam: no gradient reached the tap");
  out.gradient = tap->grad;
  return out;
}

}  // namespace detail

/// Channel weights are spatial mean gradients; map = relu(sum_k alpha_k A_k),
/// min-max normalized, with a bilinear companion at input resolution.
inline CamHeatmap grad_cam_from(const Tensor& activation, const Tensor& gradient, int input_h,
                                int input_w, int target_class, int layer_res) {
  const int h = activation.dim(1), w = activation.dim(2), c = activation.dim(3);
  std::vector<double> alpha(size_t(c), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) alpha[size_t(k)] += gradient.at4(0, y, x, k);
    }
  }
  for (double& a : alpha) a /= double(h) * w;
  Tensor raw = Tensor::zeros({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (int k = 0; k < c; ++k) v += alpha[size_t(k)] * activation.at4(0, y, x, k);
      raw.at2(y, x) = float(std::max(v, 0.0));
    }
  }
  return detail::finish_heatmap(std::move(raw), input_h, input_w, target_class, "gradcam",
                                layer_res);
}

inline CamHeatmap grad_cam(Model& model, const Tensor& image, int target_class, int layer_res) {
  auto tg = detail::tap_gradient(model, image, target_class, layer_res);
  return grad_cam_from(tg.activation, tg.gradient, image.dim(1), image.dim(2), target_class,
                       layer_res);
}

/// The exp-score closed form, so only first-order gradients are needed:
/// alpha = g^2 / (2 g^2 + sum_spatial(A) g^3) per location/channel, channel
/// weight w_k = sum alpha * relu(g).
inline CamHeatmap grad_cam_pp_from(const Tensor& activation, const Tensor& gradient, int input_h,
                                   int input_w, int target_class, int layer_res) {
  const int h = activation.dim(1), w = activation.dim(2), c = activation.dim(3);
  std::vector<double> chan_sum(size_t(c), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) chan_sum[size_t(k)] += activation.at4(0, y, x, k);
    }
  }
  std::vector<double> weight(size_t(c), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        double g = gradient.at4(0, y, x, k);
        double num = g * g;
        double den = 2.0 * g * g + chan_sum[size_t(k)] * g * g * g;
        double alpha = den != 0.0 ? num / den : 0.0;
        weight[size_t(k)] += alpha * std::max(g, 0.0);
      }
    }
  }
  Tensor raw = Tensor::zeros({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (int k = 0; k < c; ++k) v += weight[size_t(k)] * activation.at4(0, y, x, k);
      raw.at2(y, x) = float(std::max(v, 0.0));
    }
  }
  return detail::finish_heatmap(std::move(raw), input_h, input_w, target_class, "gradcampp",
                                layer_res);
}

inline CamHeatmap grad_cam_pp(Model& model, const Tensor& image, int target_class, int layer_res) {
  auto tg = detail::tap_gradient(model, image, target_class, layer_res);
  return grad_cam_pp_from(tg.activation, tg.gradient, image.dim(1), image.dim(2), target_class,
                          layer_res);
}

/// Gradient-free: each channel's upsampled normalized activation masks the
/// input, the masked forward's class score (minus the all-zero-mask baseline
/// score) is softmaxed over channels into the weights. score_of maps an input
/// tensor to the target class's softmax score.
template <class ScoreFn>
inline CamHeatmap score_cam_from(const Tensor& activation, const Tensor& image, ScoreFn&& score_of,
                                 int target_class, int layer_res, int channel_limit = 256) {
  const int h = activation.dim(1), w = activation.dim(2), c = activation.dim(3);
  if (c > channel_limit) {
    throw std::invalid_argument("score_cam: " + std::to_string(c) +
                                " channels exceed the configured limit of " +
                                std::to_string(channel_limit));
  }
  const int ih = image.dim(1), iw = image.dim(2);

  double s_base = score_of(Tensor::zeros(image.shape()));

  std::vector<double> score(size_t(c), 0.0);
  for (int k = 0; k < c; ++k) {
    Tensor chan = Tensor::zeros({h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) chan.at2(y, x) = activation.at4(0, y, x, k);
    }
    bool flat = false;
    Tensor mask = detail::upsample_2d(detail::minmax_normalize_2d(chan, &flat), ih, iw);
    Tensor masked = Tensor::zeros(image.shape());
    for (int y = 0; y < ih; ++y) {
      for (int x = 0; x < iw; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          masked.at4(0, y, x, ch) = image.at4(0, y, x, ch) * mask.at2(y, x);
        }
      }
    }
    score[size_t(k)] = score_of(masked) - s_base;
  }
  double mx = *std::max_element(score.begin(), score.end());
  double z = 0.0;
  std::vector<double> weight(size_t(c), 0.0);
  for (int k = 0; k < c; ++k) z += std::exp(score[size_t(k)] - mx);
  for (int k = 0; k < c; ++k) weight[size_t(k)] = std::exp(score[size_t(k)] - mx) / z;

  Tensor raw = Tensor::zeros({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (int k = 0; k < c; ++k) v += weight[size_t(k)] * activation.at4(0, y, x, k);
      raw.at2(y, x) = float(std::max(v, 0.0));
    }
  }
  return detail::finish_heatmap(std::move(raw), ih, iw, target_class, "scorecam", layer_res);
}

inline CamHeatmap score_cam(Model& model, const Tensor& image, int target_class, int layer_res,
                            int channel_limit = 256) {
  Tensor activation = model.forward(image, Mode::Infer).tap_for_layer_res(layer_res)->val;
  auto score_of = [&](const Tensor& input) {
    return double(model.forward(input, Mode::Infer).probs.at2(0, target_class));
  };
  return score_cam_from(activation, image, score_of, target_class, layer_res, channel_limit);
}

/// Blue-to-red colormap with linear interpolation over the RGB stops
/// (0.00: 0,0,1) (0.35: 0,1,1) (0.65: 1,1,0) (1.00: 1,0,0).
inline void heatmap_color(float v, float rgb[3]) {
  static const float stops[4][4] = {{0.00f, 0.0f, 0.0f, 1.0f},
                                    {0.35f, 0.0f, 1.0f, 1.0f},
                                    {0.65f, 1.0f, 1.0f, 0.0f},
                                    {1.00f, 1.0f, 0.0f, 0.0f}};
  v = std::clamp(v, 0.0f, 1.0f);
  for (int s = 0; s < 3; ++s) {
    if (v <= stops[s + 1][0]) {
      float t = (v - stops[s][0]) / (stops[s + 1][0] - stops[s][0]);
      for (int c = 0; c < 3; ++c) rgb[c] = stops[s][c + 1] + t * (stops[s + 1][c + 1] - stops[s][c + 1]);
      return;
    }
  }
  for (int c = 0; c < 3; ++c) rgb[c] = stops[3][c + 1];
}

/// 50/50 alpha blend of the input image with the colormapped heatmap.
inline void write_heatmap_overlay(const std::string& path, const Tensor& image,
                                  const CamHeatmap& hm) {
  const int h = image.dim(1), w = image.dim(2);
  Tensor out = Tensor::zeros({h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float rgb[3];
      heatmap_color(hm.upsampled.at2(y, x), rgb);
      for (int c = 0; c < 3; ++c) {
        out[(int64_t(y) * w + x) * 3 + c] = 0.5f * image.at4(0, y, x, c) + 0.5f * rgb[c];
      }
    }
  }
  write_image(path, out);
}

inline void write_heatmap_csv(const std::string& path, const CamHeatmap& hm) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("explain: cannot write " + path);
  out.precision(9);
  for (int y = 0; y < hm.grid.dim(0); ++y) {
    for (int x = 0; x < hm.grid.dim(1); ++x) {
      out << (x ? "," : "") << hm.grid.at2(y, x);
    }
    out << "\n";
  }
}

}  // namespace lret
