#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lret/autodiff.hpp"
#include "lret/rng.hpp"
#include "lret/tensor.hpp"

namespace lret {

enum class Mode { Train, Infer };
enum class Padding { Same, Valid };

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace detail {

struct ConvGeom {
  int out_h, out_w;
  int pad_top, pad_left;
};

inline int same_out(int in, int stride) { return (in + stride - 1) / stride; }

inline ConvGeom conv_geometry(int h, int w, int kh, int kw, int stride, Padding pad) {
  ConvGeom g{};
  if (pad == Padding::Same) {
    g.out_h = same_out(h, stride);
    g.out_w = same_out(w, stride);
    int pad_h = std::max((g.out_h - 1) * stride + kh - h, 0);
    int pad_w = std::max((g.out_w - 1) * stride + kw - w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    g.out_h = (h - kh) / stride + 1;
    g.out_w = (w - kw) / stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
    if (g.out_h <= 0 || g.out_w <= 0) {
      throw std::invalid_argument("conv2d: zero-sized spatial output");
    }
  }
  return g;
}

// Unpacks one NHWC sample into (out_h*out_w, kh*kw*cin) patch rows.
inline void im2col(const float* x, int h, int w, int cin, int kh, int kw, int stride,
                   const ConvGeom& g, float* cols) {
  const int patch = kh * kw * cin;
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      float* row = cols + (int64_t(oy) * g.out_w + ox) * patch;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride - g.pad_top + ky;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride - g.pad_left + kx;
          float* dst = row + (ky * kw + kx) * cin;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::fill(dst, dst + cin, 0.0f);
          } else {
            const float* src = x + (int64_t(iy) * w + ix) * cin;
            std::copy(src, src + cin, dst);
          }
        }
      }
    }
  }
}

// Scatter-add of patch-row gradients back into one NHWC sample.
inline void col2im_add(const float* cols, int h, int w, int cin, int kh, int kw, int stride,
                       const ConvGeom& g, float* dx) {
  const int patch = kh * kw * cin;
  for (int oy = 0; oy < g.out_h; ++oy) {
    for (int ox = 0; ox < g.out_w; ++ox) {
      const float* row = cols + (int64_t(oy) * g.out_w + ox) * patch;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride - g.pad_top + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride - g.pad_left + kx;
          if (ix < 0 || ix >= w) continue;
          const float* src = row + (ky * kw + kx) * cin;
          float* dst = dx + (int64_t(iy) * w + ix) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

struct AxisSample {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};

// Half-pixel source coordinates, clamped to the valid range.
inline AxisSample resize_axis(int in, int out) {
  AxisSample s;
  s.lo.resize(out);
  s.hi.resize(out);
  s.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > in - 1) src = in - 1;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    s.lo[i] = lo;
    s.hi[i] = std::min(lo + 1, in - 1);
    s.frac[i] = static_cast<float>(src - lo);
  }
  return s;
}

}  // namespace detail

/// 2-D convolution, NHWC input, (kh,kw,cin,cout) kernel. "same" padding uses
/// the ceil-division output-size convention.
inline Value conv2d(const Value& x, const Value& kernel, const Value& bias, int stride,
                    Padding pad, std::string tag = "conv2d") {
  const Tensor& xv = x->val;
  const Tensor& kv = kernel->val;
  if (xv.rank() != 4 || kv.rank() != 4) throw std::invalid_argument(tag + ": rank mismatch");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const int kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  if (kv.dim(2) != cin) {
    throw std::invalid_argument(tag + ": input has " + std::to_string(cin) +
                                " channels, kernel expects " + std::to_string(kv.dim(2)));
  }
  if (bias->val.size() != cout) throw std::invalid_argument(tag + ": bias size mismatch");
  const auto g = detail::conv_geometry(h, w, kh, kw, stride, pad);

  const int patch = kh * kw * cin;
  const int opix = g.out_h * g.out_w;
  Tensor out({n, g.out_h, g.out_w, cout});
  std::vector<float> cols(static_cast<size_t>(opix) * patch);
  CMapMat K(kv.data(), patch, cout);
  Eigen::Map<const Eigen::RowVectorXf> B(bias->val.data(), cout);
  for (int i = 0; i < n; ++i) {
    detail::im2col(xv.data() + int64_t(i) * h * w * cin, h, w, cin, kh, kw, stride, g,
                   cols.data());
    CMapMat C(cols.data(), opix, patch);
    MapMat O(out.data() + int64_t(i) * opix * cout, opix, cout);
    O.noalias() = C * K;
    O.rowwise() += B;
  }

  auto bp = [stride, pad, g, n, h, w, cin, kh, kw, cout, patch, opix](Node& node) {
    const Tensor& xv = node.inputs[0]->val;
    const Tensor& kv = node.inputs[1]->val;
    Tensor& dk = node.inputs[1]->ensure_grad();
    Tensor& db = node.inputs[2]->ensure_grad();
    MapMat DK(dk.data(), patch, cout);
    CMapMat K(kv.data(), patch, cout);
    const bool need_dx = node.inputs[0]->needs_grad;
    Tensor* dx = need_dx ? &node.inputs[0]->ensure_grad() : nullptr;
    std::vector<float> cols(static_cast<size_t>(opix) * patch);
    std::vector<float> dcols(need_dx ? cols.size() : 0);
    for (int i = 0; i < n; ++i) {
      detail::im2col(xv.data() + int64_t(i) * h * w * cin, h, w, cin, kh, kw, stride, g,
                     cols.data());
      CMapMat C(cols.data(), opix, patch);
      CMapMat DO(node.grad.data() + int64_t(i) * opix * cout, opix, cout);
      DK.noalias() += C.transpose() * DO;
      for (int c = 0; c < cout; ++c) db[c] += DO.col(c).sum();
      if (need_dx) {
        MapMat DC(dcols.data(), opix, patch);
        DC.noalias() = DO * K.transpose();
        detail::col2im_add(dcols.data(), h, w, cin, kh, kw, stride, g,
                           dx->data() + int64_t(i) * h * w * cin);
      }
    }
  };
  return make_node(std::move(out), {x, kernel, bias}, std::move(bp), std::move(tag));
}

/// Batch normalization over (N,H,W) per channel. Train mode uses batch
/// statistics and updates the running stats in place; infer mode reads them.
inline Value batch_norm(const Value& x, const Value& gamma, const Value& beta,
                        Tensor& running_mean, Tensor& running_var, Mode mode,
                        float momentum = 0.99f, float epsilon = 1e-5f,
                        std::string tag = "batch_norm") {
  const Tensor& xv = x->val;
  if (xv.rank() != 4) throw std::invalid_argument(tag + ": expects NHWC input");
  const int c = xv.dim(3);
  if (gamma->val.size() != c || beta->val.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw std::invalid_argument(tag + ": per-channel parameter size mismatch");
  }
  const int64_t m = xv.size() / c;  // N*H*W
  if (m == 0) throw std::invalid_argument(tag + ": empty batch");

  std::vector<float> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    std::vector<double> sum(c, 0.0), sumsq(c, 0.0);
    const float* p = xv.data();
    for (int64_t i = 0; i < m; ++i) {
      for (int j = 0; j < c; ++j) {
        double v = *p++;
        sum[j] += v;
        sumsq[j] += v * v;
      }
    }
    for (int j = 0; j < c; ++j) {
      double mu = sum[j] / static_cast<double>(m);
      double var = std::max(sumsq[j] / static_cast<double>(m) - mu * mu, 0.0);
      mean[j] = static_cast<float>(mu);
      inv_std[j] = static_cast<float>(1.0 / std::sqrt(var + epsilon));
      running_mean[j] = momentum * running_mean[j] + (1.0f - momentum) * static_cast<float>(mu);
      running_var[j] = momentum * running_var[j] + (1.0f - momentum) * static_cast<float>(var);
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mean[j] = running_mean[j];
      inv_std[j] = 1.0f / std::sqrt(running_var[j] + epsilon);
    }
  }

  Tensor out(xv.shape());
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(xv.size()));
  {
    const float* p = xv.data();
    float* q = out.data();
    float* xh = xhat->data();
    const float* gm = gamma->val.data();
    const float* bt = beta->val.data();
    for (int64_t i = 0; i < m; ++i) {
      for (int j = 0; j < c; ++j) {
        float z = (*p++ - mean[j]) * inv_std[j];
        *xh++ = z;
        *q++ = gm[j] * z + bt[j];
      }
    }
  }

  const bool train = (mode == Mode::Train);
  auto bp = [c, m, xhat, inv_std, train](Node& node) {
    const float* dy = node.grad.data();
    const float* xh = xhat->data();
    const float* gm = node.inputs[1]->val.data();
    Tensor& dgamma = node.inputs[1]->ensure_grad();
    Tensor& dbeta = node.inputs[2]->ensure_grad();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
    for (int64_t i = 0; i < m; ++i) {
      for (int j = 0; j < c; ++j) {
        double d = dy[i * c + j];
        sum_dy[j] += d;
        sum_dy_xh[j] += d * xh[i * c + j];
      }
    }
    for (int j = 0; j < c; ++j) {
      dbeta[j] += static_cast<float>(sum_dy[j]);
      dgamma[j] += static_cast<float>(sum_dy_xh[j]);
    }
    if (!node.inputs[0]->needs_grad) return;
    Tensor& dx = node.inputs[0]->ensure_grad();
    float* dxp = dx.data();
    if (train) {
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int64_t i = 0; i < m; ++i) {
        for (int j = 0; j < c; ++j) {
          double dxhat = static_cast<double>(dy[i * c + j]) * gm[j];
          double corr = inv_m * (sum_dy[j] * gm[j] + xh[i * c + j] * sum_dy_xh[j] * gm[j]);
          dxp[i * c + j] += static_cast<float>(inv_std[j] * (dxhat - corr));
        }
      }
    } else {
      for (int64_t i = 0; i < m; ++i) {
        for (int j = 0; j < c; ++j) {
          dxp[i * c + j] += dy[i * c + j] * gm[j] * inv_std[j];
        }
      }
    }
  };
  return make_node(std::move(out), {x, gamma, beta}, std::move(bp), std::move(tag));
}

inline Value leaky_relu(const Value& x, float slope, std::string tag = "leaky_relu") {
  Tensor out(x->val.shape());
  const float* p = x->val.data();
  float* q = out.data();
  for (int64_t i = 0; i < out.size(); ++i) q[i] = p[i] < 0.0f ? slope * p[i] : p[i];
  auto bp = [slope](Node& node) {
    const Tensor& xv = node.inputs[0]->val;
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < xv.size(); ++i) {
      dx[i] += node.grad[i] * (xv[i] > 0.0f ? 1.0f : (xv[i] < 0.0f ? slope : 0.0f));
    }
  };
  return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
}

inline Value relu(const Value& x, std::string tag = "relu") {
  return leaky_relu(x, 0.0f, std::move(tag));
}

/// Max pooling; gradient routes to the first-occurring argmax of each window.
inline Value max_pool(const Value& x, int window, int stride, Padding pad,
                      std::string tag = "max_pool") {
  const Tensor& xv = x->val;
  if (xv.rank() != 4) throw std::invalid_argument(tag + ": expects NHWC input");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const auto g = detail::conv_geometry(h, w, window, window, stride, pad);
  Tensor out({n, g.out_h, g.out_w, c});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
  int64_t oi = 0;
  for (int i = 0; i < n; ++i) {
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        for (int ch = 0; ch < c; ++ch) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int ky = 0; ky < window; ++ky) {
            int iy = oy * stride - g.pad_top + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < window; ++kx) {
              int ix = ox * stride - g.pad_left + kx;
              if (ix < 0 || ix >= w) continue;
              int64_t idx = ((int64_t(i) * h + iy) * w + ix) * c + ch;
              if (xv[idx] > best) {
                best = xv[idx];
                best_idx = idx;
              }
            }
          }
          out[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
          ++oi;
        }
      }
    }
  }
  auto bp = [argmax](Node& node) {
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < node.grad.size(); ++i) {
      int64_t src = (*argmax)[static_cast<size_t>(i)];
      if (src >= 0) dx[src] += node.grad[i];
    }
  };
  return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
}

/// Spatial mean per channel: (N,H,W,C) -> (N,C).
inline Value global_avg_pool(const Value& x, std::string tag = "global_avg_pool") {
  const Tensor& xv = x->val;
  if (xv.rank() != 4) throw std::invalid_argument(tag + ": expects NHWC input");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  Tensor out({n, c});
  const float inv = 1.0f / static_cast<float>(h * w);
  for (int i = 0; i < n; ++i) {
    std::vector<double> acc(c, 0.0);
    const float* p = xv.data() + int64_t(i) * h * w * c;
    for (int s = 0; s < h * w; ++s) {
      for (int j = 0; j < c; ++j) acc[j] += *p++;
    }
    for (int j = 0; j < c; ++j) out.at2(i, j) = static_cast<float>(acc[j]) * inv;
  }
  auto bp = [n, h, w, c, inv](Node& node) {
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      float* p = dx.data() + int64_t(i) * h * w * c;
      const float* dg = node.grad.data() + int64_t(i) * c;
      for (int s = 0; s < h * w; ++s) {
        for (int j = 0; j < c; ++j) *p++ += dg[j] * inv;
      }
    }
  };
  return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
}

/// Affine map: (N,D) x (D,M) + (M) -> (N,M).
inline Value dense(const Value& x, const Value& weight, const Value& bias,
                   std::string tag = "dense") {
  const Tensor& xv = x->val;
  const Tensor& wv = weight->val;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0)) {
    throw std::invalid_argument(tag + ": dimension mismatch");
  }
  const int n = xv.dim(0), d = xv.dim(1), m = wv.dim(1);
  if (bias->val.size() != m) throw std::invalid_argument(tag + ": bias size mismatch");
  Tensor out({n, m});
  {
    CMapMat X(xv.data(), n, d);
    CMapMat W(wv.data(), d, m);
    MapMat O(out.data(), n, m);
    O.noalias() = X * W;
    O.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias->val.data(), m);
  }
  auto bp = [n, d, m](Node& node) {
    CMapMat DO(node.grad.data(), n, m);
    CMapMat X(node.inputs[0]->val.data(), n, d);
    CMapMat W(node.inputs[1]->val.data(), d, m);
    MapMat DW(node.inputs[1]->ensure_grad().data(), d, m);
    DW.noalias() += X.transpose() * DO;
    Tensor& db = node.inputs[2]->ensure_grad();
    for (int j = 0; j < m; ++j) db[j] += DO.col(j).sum();
    if (node.inputs[0]->needs_grad) {
      MapMat DX(node.inputs[0]->ensure_grad().data(), n, d);
      DX.noalias() += DO * W.transpose();
    }
  };
  return make_node(std::move(out), {x, weight, bias}, std::move(bp), std::move(tag));
}

/// Inverted dropout: survivors scaled by 1/(1-rate); identity in infer mode.
inline Value dropout(const Value& x, float rate, Mode mode, Rng& rng,
                     std::string tag = "dropout") {
  if (rate < 0.0f || rate >= 1.0f) throw std::invalid_argument(tag + ": rate must be in [0,1)");
  if (mode == Mode::Infer || rate == 0.0f) {
    Tensor out = x->val;
    auto bp = [](Node& node) { accumulate(node.inputs[0]->ensure_grad(), node.grad); };
    return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
  }
  const float scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(x->val.size()));
  Tensor out(x->val.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    float m = rng.uniform() < rate ? 0.0f : scale;
    (*mask)[static_cast<size_t>(i)] = m;
    out[i] = x->val[i] * m;
  }
  auto bp = [mask](Node& node) {
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < node.grad.size(); ++i) {
      dx[i] += node.grad[i] * (*mask)[static_cast<size_t>(i)];
    }
  };
  return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
}

/// Row-stable softmax of (N,K) logits (max subtraction), returned as a plain
/// tensor.
inline Tensor softmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor probs({n, k});
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + int64_t(i) * k;
    float mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < k; ++j) {
      probs.at2(i, j) = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / sum);
    }
  }
  return probs;
}

/// Class-weighted softmax cross entropy. loss = mean_i w[y_i] * (-log p[y_i]).
inline std::pair<Value, Tensor> softmax_cross_entropy(const Value& logits,
                                                      const std::vector<int>& labels,
                                                      const std::vector<float>& class_weights,
                                                      std::string tag = "softmax_ce") {
  const Tensor& lv = logits->val;
  if (lv.rank() != 2) throw std::invalid_argument(tag + ": logits must be (N,K)");
  const int n = lv.dim(0), k = lv.dim(1);
  if (k < 2) throw std::invalid_argument(tag + ": need at least 2 classes");
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument(tag + ": label count");
  if (static_cast<int>(class_weights.size()) != k) {
    throw std::invalid_argument(tag + ": class_weights size");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw std::out_of_range(tag + ": label out of range");
  }
  Tensor probs = softmax_rows(lv);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double p = std::max(static_cast<double>(probs.at2(i, labels[i])), 1e-30);
    loss += class_weights[static_cast<size_t>(labels[i])] * -std::log(p);
  }
  loss /= n;
  auto probs_copy = std::make_shared<Tensor>(probs);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto weights_copy = std::make_shared<std::vector<float>>(class_weights);
  auto bp = [probs_copy, labels_copy, weights_copy, n, k](Node& node) {
    const float up = node.grad[0];
    Tensor& dl = node.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      int y = (*labels_copy)[static_cast<size_t>(i)];
      float w = (*weights_copy)[static_cast<size_t>(y)];
      for (int j = 0; j < k; ++j) {
        float p = probs_copy->at2(i, j);
        dl.at2(i, j) += up * w * (p - (j == y ? 1.0f : 0.0f)) / static_cast<float>(n);
      }
    }
  };
  Value loss_node = make_node(Tensor::scalar(static_cast<float>(loss)), {logits}, std::move(bp),
                              std::move(tag));
  return {loss_node, std::move(probs)};
}

/// Differentiable bilinear resize, half-pixel (align-corners=false) sampling.
/// Same-size resize is an exact copy.
inline Value bilinear_resize(const Value& x, int out_h, int out_w,
                             std::string tag = "bilinear_resize") {
  const Tensor& xv = x->val;
  if (xv.rank() != 4) throw std::invalid_argument(tag + ": expects NHWC input");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument(tag + ": output dims must be >= 1");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (out_h == h && out_w == w) {
    Tensor out = xv;
    auto bp = [](Node& node) { accumulate(node.inputs[0]->ensure_grad(), node.grad); };
    return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
  }
  auto ys = std::make_shared<detail::AxisSample>(detail::resize_axis(h, out_h));
  auto xs = std::make_shared<detail::AxisSample>(detail::resize_axis(w, out_w));
  Tensor out({n, out_h, out_w, c});
  for (int i = 0; i < n; ++i) {
    for (int oy = 0; oy < out_h; ++oy) {
      const int y0 = ys->lo[oy], y1 = ys->hi[oy];
      const float fy = ys->frac[oy];
      for (int ox = 0; ox < out_w; ++ox) {
        const int x0 = xs->lo[ox], x1 = xs->hi[ox];
        const float fx = xs->frac[ox];
        for (int ch = 0; ch < c; ++ch) {
          float top = xv.at4(i, y0, x0, ch) * (1.0f - fx) + xv.at4(i, y0, x1, ch) * fx;
          float bot = xv.at4(i, y1, x0, ch) * (1.0f - fx) + xv.at4(i, y1, x1, ch) * fx;
          out.at4(i, oy, ox, ch) = top * (1.0f - fy) + bot * fy;
        }
      }
    }
  }
  auto bp = [ys, xs, n, out_h, out_w, c](Node& node) {
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = ys->lo[oy], y1 = ys->hi[oy];
        const float fy = ys->frac[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = xs->lo[ox], x1 = xs->hi[ox];
          const float fx = xs->frac[ox];
          for (int ch = 0; ch < c; ++ch) {
            float g = node.grad.at4(i, oy, ox, ch);
            dx.at4(i, y0, x0, ch) += g * (1.0f - fy) * (1.0f - fx);
            dx.at4(i, y0, x1, ch) += g * (1.0f - fy) * fx;
            dx.at4(i, y1, x0, ch) += g * fy * (1.0f - fx);
            dx.at4(i, y1, x1, ch) += g * fy * fx;
          }
        }
      }
    }
  };
  return make_node(std::move(out), {x}, std::move(bp), std::move(tag));
}

/// Non-differentiable bilinear resize over a raw tensor (preprocessing path).
inline Tensor bilinear_resize_tensor(const Tensor& x, int out_h, int out_w) {
  Value v = make_constant(x);
  return bilinear_resize(v, out_h, out_w)->val;
}

inline Value add(const Value& a, const Value& b, std::string tag = "add") {
  if (!a->val.same_shape(b->val)) throw std::invalid_argument(tag + ": shape mismatch");
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] + b->val[i];
  auto bp = [](Node& node) {
    if (node.inputs[0]->needs_grad) accumulate(node.inputs[0]->ensure_grad(), node.grad);
    if (node.inputs[1]->needs_grad) accumulate(node.inputs[1]->ensure_grad(), node.grad);
  };
  return make_node(std::move(out), {a, b}, std::move(bp), std::move(tag));
}

/// Picks a single logit (pre-softmax score) as a scalar node.
inline Value select_logit(const Value& logits, int row, int col, std::string tag = "select") {
  const Tensor& lv = logits->val;
  if (lv.rank() != 2) throw std::invalid_argument(tag + ": expects (N,K)");
  const int k = lv.dim(1);
  auto bp = [row, col, k](Node& node) {
    node.inputs[0]->ensure_grad().at2(row, col) += node.grad[0];
  };
  return make_node(Tensor::scalar(lv.at2(row, col)), {logits}, std::move(bp), std::move(tag));
}

inline Value sum_all(const Value& x, std::string tag = "sum") {
  double s = 0.0;
  for (int64_t i = 0; i < x->val.size(); ++i) s += x->val[i];
  auto bp = [](Node& node) {
    Tensor& dx = node.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < dx.size(); ++i) dx[i] += node.grad[0];
  };
  return make_node(Tensor::scalar(static_cast<float>(s)), {x}, std::move(bp), std::move(tag));
}

}  // namespace lret
