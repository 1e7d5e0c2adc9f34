#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/image_io.hpp"
#include "lret/manifest.hpp"
#include "lret/rng.hpp"
#include "lret/tensor.hpp"

namespace lret {

/// Synthetic texture dataset. "coarse" families differ in base intensity (and
/// look different), so a shallow mean/variance classifier separates them.
/// "fine" families differ only in the orientation of period-2 stripes: the
/// evidence lives at full resolution and cancels under a 4x bilinear resize.
struct SynthSpec {
  int classes = 4;
  int per_class = 50;
  int patch = 256;
  uint64_t seed = 0;
  std::string style = "coarse";  // coarse | fine
  double train_frac = 0.7;
  double val_frac = 0.15;
  double test_frac = 0.15;

  void validate() const {
    if (classes < 2) throw std::invalid_argument("SynthSpec: need at least 2 classes");
    if (per_class < 1) throw std::invalid_argument("SynthSpec: per_class must be >= 1");
    if (patch < 32) throw std::invalid_argument("SynthSpec: patch must be >= 32");
    if (style != "coarse" && style != "fine") {
      throw std::invalid_argument("SynthSpec: style must be coarse or fine");
    }
    if (style == "fine" && classes > 3) {
      // only three zero-mean period-2 parity patterns exist on a 2x2 cell
      throw std::invalid_argument("SynthSpec: fine style supports at most 3 classes");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
      throw std::invalid_argument("SynthSpec: split fractions must sum to 1");
    }
  }
};

namespace detail {

// low-frequency per-image field shared by all families so it carries no
// class signal
inline void add_smooth_field(Tensor& img, Rng& rng, double amp) {
  const int s = img.dim(0);
  double fx = 1.0 + rng.uniform() * 2.0, fy = 1.0 + rng.uniform() * 2.0;
  double px = rng.uniform() * 6.283, py = rng.uniform() * 6.283;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      float v = float(amp * std::sin(6.283 * fy * y / s + py) *
                      std::sin(6.283 * fx * x / s + px));
      for (int c = 0; c < 3; ++c) img[(int64_t(y) * s + x) * 3 + c] += v;
    }
  }
}

}  // namespace detail

/// One synthetic image of class k as (S,S,3) floats in [0,1].
inline Tensor synth_image(const SynthSpec& spec, int k, Rng& rng) {
  const int s = spec.patch;
  Tensor img = Tensor::zeros({s, s, 3});
  if (spec.style == "coarse") {
    // classes sit at well-separated base intensities; texture type cycles
    // through four looks with zero-mean detail
    double base = 0.15 + 0.7 * double(k) / double(std::max(spec.classes - 1, 1));
    base += (rng.uniform() - 0.5) * 0.03;
    for (int64_t i = 0; i < img.size(); ++i) img[i] = float(base);
    const int look = k % 4;
    const double amp = 0.06;
    if (look == 0) {  // blob field
      const int blobs = 30;
      std::vector<std::array<double, 3>> bs;
      for (int b = 0; b < blobs; ++b) {
        bs.push_back({rng.uniform() * s, rng.uniform() * s, s * (0.02 + rng.uniform() * 0.04)});
      }
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          double v = 0.0;
          for (const auto& b : bs) {
            double d2 = (x - b[0]) * (x - b[0]) + (y - b[1]) * (y - b[1]);
            v += std::exp(-d2 / (2.0 * b[2] * b[2]));
          }
          float f = float(amp * (v - 0.5));
          for (int c = 0; c < 3; ++c) img[(int64_t(y) * s + x) * 3 + c] += f;
        }
      }
    } else if (look == 1) {  // oriented stripes
      double angle = rng.uniform() * 3.1416, period = 8.0 + rng.uniform() * 8.0;
      double ca = std::cos(angle), sa = std::sin(angle);
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          float f = float(amp * std::sin(6.283 * (ca * x + sa * y) / period));
          for (int c = 0; c < 3; ++c) img[(int64_t(y) * s + x) * 3 + c] += f;
        }
      }
    } else if (look == 2) {  // checks
      int cell = 8 + int(rng.below(8));
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          float f = float(((x / cell + y / cell) % 2 == 0 ? 1.0 : -1.0) * amp);
          for (int c = 0; c < 3; ++c) img[(int64_t(y) * s + x) * 3 + c] += f;
        }
      }
    } else {  // uniform noise
      for (int64_t i = 0; i < img.size(); i += 3) {
        float f = float((rng.uniform() - 0.5) * 2.0 * amp);
        for (int c = 0; c < 3; ++c) img[i + c] += f;
      }
    }
    detail::add_smooth_field(img, rng, 0.02);
  } else {
    // fine: identical base and statistics; the only class evidence is a
    // period-2 parity pattern whose orientation encodes the class. The
    // half-pixel 4x bilinear average of any of these patterns is zero.
    for (int64_t i = 0; i < img.size(); ++i) img[i] = 0.5f;
    const int phase_x = int(rng.below(2)), phase_y = int(rng.below(2));
    const double amp = 0.25;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        int parity;
        switch (k) {
          case 0: parity = (y + phase_y) & 1; break;      // horizontal stripes
          case 1: parity = (x + phase_x) & 1; break;      // vertical stripes
          default: parity = (x + y + phase_x) & 1; break; // checker
        }
        float f = float(parity ? amp : -amp);
        for (int c = 0; c < 3; ++c) img[(int64_t(y) * s + x) * 3 + c] += f;
      }
    }
    detail::add_smooth_field(img, rng, 0.02);
  }
  for (int64_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
  return img;
}

/// Writes the dataset under out_dir (PPM images + manifest.csv) and returns
/// the manifest. Deterministic in spec.seed.
inline DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<Record> records;
  for (int k = 0; k < spec.classes; ++k) {
    std::string label = "class" + std::to_string(k);
    for (int i = 0; i < spec.per_class; ++i) {
      Rng rng(mix_seed(spec.seed, uint64_t(k) * 1000003u + uint64_t(i)));
      Tensor img = synth_image(spec, k, rng);
      std::string name = label + "_" + std::to_string(i) + ".ppm";
      write_image(out_dir + "/" + name, img);
      records.push_back({name, label, "train"});
    }
  }
  std::vector<std::pair<std::string, double>> ratios;
  ratios.push_back({"train", spec.train_frac});
  if (spec.val_frac > 0.0) ratios.push_back({"val", spec.val_frac});
  if (spec.test_frac > 0.0) ratios.push_back({"test", spec.test_frac});
  DatasetManifest m = split_dataset(std::move(records), ratios, mix_seed(spec.seed, 0x73706c69));
  m.base_dir = out_dir;
  save_manifest(m, out_dir + "/manifest.csv");
  return m;
}

}  // namespace lret
