#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/model.hpp"

namespace lret {

struct FeatureVector {
  std::vector<float> values;  // GAP of the final feature map
  int label = 0;
  std::string origin;  // split the image came from
};

/// One GAP vector per image, length == the backbone's feature channel count.
inline std::vector<FeatureVector> extract_features(Model& model, const Tensor& batch,
                                                   const std::vector<int>& labels,
                                                   const std::string& origin = "") {
  if (int64_t(labels.size()) != batch.dim(0)) {
    throw std::invalid_argument("extract_features: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(batch.dim(0)) + " images");
  }
  auto r = model.forward(batch, Mode::Infer);
  const Tensor& fen = r.fen->val;
  const int n = fen.dim(0), h = fen.dim(1), w = fen.dim(2), c = fen.dim(3);
  std::vector<FeatureVector> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    FeatureVector& fv = out[size_t(i)];
    fv.label = labels[size_t(i)];
    fv.origin = origin;
    fv.values.assign(size_t(c), 0.0f);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int k = 0; k < c; ++k) fv.values[size_t(k)] += fen.at4(i, y, x, k);
      }
    }
    for (float& v : fv.values) v /= float(h * w);
  }
  return out;
}

/// Seeded partition of each class into groups of k (remainder dropped); each
/// group is replaced by its mean vector. Labels carry over; origin becomes the
/// first member's.
inline std::vector<FeatureVector> average_by_k(const std::vector<FeatureVector>& vectors, int k,
                                               uint64_t seed) {
  if (k != 2 && k != 3 && k != 5 && k != 10) {
    throw std::invalid_argument("average_by_k: k must be one of 2, 3, 5, 10");
  }
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < vectors.size(); ++i) by_class[vectors[i].label].push_back(i);
  for (const auto& [label, idx] : by_class) {
    if (int(idx.size()) < k) {
      throw std::invalid_argument("average_by_k: class " + std::to_string(label) + " has " +
                                  std::to_string(idx.size()) + " vectors, fewer than k=" +
                                  std::to_string(k));
    }
  }
  std::vector<FeatureVector> out;
  for (auto& [label, idx] : by_class) {
    Rng rng(mix_seed(seed, uint64_t(label)));
    rng.shuffle(idx);
    const size_t dim = vectors[idx[0]].values.size();
    for (size_t g = 0; g + size_t(k) <= idx.size(); g += size_t(k)) {
      FeatureVector fv;
      fv.label = label;
      fv.origin = vectors[idx[g]].origin;
      fv.values.assign(dim, 0.0f);
      for (size_t j = 0; j < size_t(k); ++j) {
        const auto& src = vectors[idx[g + j]].values;
        for (size_t d = 0; d < dim; ++d) fv.values[d] += src[d];
      }
      for (float& v : fv.values) v /= float(k);
      out.push_back(std::move(fv));
    }
  }
  return out;
}

}  // namespace lret
