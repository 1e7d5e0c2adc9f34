#pragma once

#include <vector>

#include "lret/rng.hpp"
#include "lret/tensor.hpp"
#include "oracle_ref.hpp"

namespace testutil {

inline lret::Tensor random_tensor(std::vector<int> shape, lret::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  lret::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline oracle::Vec to_vec(const lret::Tensor& t) {
  return oracle::Vec(t.vec().begin(), t.vec().end());
}

inline oracle::Vec grad_of(const lret::Tensor& g) { return to_vec(g); }

inline oracle::Shape4 shape4(const lret::Tensor& t) {
  return oracle::Shape4{t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

}  // namespace testutil
