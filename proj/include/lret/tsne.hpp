#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lret/rng.hpp"

namespace lret {

struct TsneConfig {
  double perplexity = 40.0;
  int iterations = 300;
  uint64_t seed = 0;

  void validate() const {
    if (perplexity < 1.0) throw std::invalid_argument("tsne: perplexity must be >= 1");
    if (iterations < 1) throw std::invalid_argument("tsne: iterations must be >= 1");
  }
};

struct TsneResult {
  std::vector<double> coords;  // N x 2 row-major
  std::vector<double> kl_history;
  double effective_perplexity = 0.0;
  bool perplexity_capped = false;
  bool duplicates_jittered = false;
  // diagnostics over the high-dimensional affinities
  std::vector<double> conditional_row_sums;   // should each be 1
  std::vector<double> realized_perplexities;  // should match effective_perplexity
  double max_p_asymmetry = 0.0;               // joint P, should be 0
};

namespace tsne_detail {

inline std::vector<double> pairwise_sq_dists(const std::vector<double>& x, size_t n, size_t d) {
  std::vector<double> dist(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (size_t k = 0; k < d; ++k) {
        double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist[i * n + j] = s;
      dist[j * n + i] = s;
    }
  }
  return dist;
}

/// Row of conditional probabilities at a given precision beta = 1/(2 sigma^2);
/// returns the Shannon entropy (nats) of the row.
inline double gaussian_row(const std::vector<double>& dist, size_t n, size_t i, double beta,
                           std::vector<double>& row) {
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    row[j] = j == i ? 0.0 : std::exp(-beta * dist[i * n + j]);
    sum += row[j];
  }
  if (sum <= 0.0) sum = std::numeric_limits<double>::min();
  double entropy = 0.0;
  for (size_t j = 0; j < n; ++j) {
    row[j] /= sum;
    if (row[j] > 0.0) entropy -= row[j] * std::log(row[j]);
  }
  return entropy;
}

}  // namespace tsne_detail

/// Exact t-SNE. Per-point bandwidths are found by binary search so each row's
/// perplexity matches the target within 1e-5 (up to 50 halvings); the joint P
/// is the symmetrized conditional matrix. Optimization: early exaggeration x12
/// for the first 100 iterations, gradient descent with learning rate 200 and
/// momentum 0.5 switching to 0.8 at iteration 100, from a seeded Gaussian init
/// with sigma 1e-4.
inline TsneResult tsne(const std::vector<double>& x, size_t n, size_t d, TsneConfig cfg = {}) {
  cfg.validate();
  if (x.size() != n * d) throw std::invalid_argument("tsne: data size does not match n*d");
  if (n < 4) throw std::invalid_argument("tsne: need at least 4 points");

  TsneResult res;
  double perplexity = cfg.perplexity;
  if (perplexity > double(n - 1) / 3.0) {
    perplexity = double(n - 1) / 3.0;
    res.perplexity_capped = true;
  }
  res.effective_perplexity = perplexity;

  std::vector<double> data = x;
  auto dist = tsne_detail::pairwise_sq_dists(data, n, d);

  // exact duplicates make a row's conditional distribution degenerate; jitter
  // breaks the tie
  Rng rng(mix_seed(cfg.seed, 0x74736e65ULL));
  bool has_dup = false;
  for (size_t i = 0; i < n && !has_dup; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      if (dist[i * n + j] == 0.0) {
        has_dup = true;
        break;
      }
    }
  }
  if (has_dup) {
    res.duplicates_jittered = true;
    double scale = 0.0;
    for (double v : dist) scale = std::max(scale, v);
    double eps = scale > 0.0 ? 1e-6 * std::sqrt(scale) : 1e-6;
    for (size_t i = 0; i < n * d; ++i) data[i] += eps * rng.normal();
    dist = tsne_detail::pairwise_sq_dists(data, n, d);
  }

  const double target_entropy = std::log(perplexity);
  std::vector<double> p(n * n, 0.0);
  std::vector<double> row(n);
  res.conditional_row_sums.resize(n);
  res.realized_perplexities.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = tsne_detail::gaussian_row(dist, n, i, beta, row);
    for (int it = 0; it < 50 && std::abs(entropy - target_entropy) > 1e-5; ++it) {
      if (entropy > target_entropy) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      entropy = tsne_detail::gaussian_row(dist, n, i, beta, row);
    }
    double rsum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      p[i * n + j] = row[j];
      rsum += row[j];
    }
    res.conditional_row_sums[i] = rsum;
    res.realized_perplexities[i] = std::exp(entropy);
  }

  // symmetrize into the joint distribution
  const double p_floor = 1e-12;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double pij = (p[i * n + j] + p[j * n + i]) / (2.0 * double(n));
      pij = std::max(pij, p_floor);
      p[i * n + j] = pij;
      p[j * n + i] = pij;
    }
    p[i * n + i] = 0.0;
  }
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      res.max_p_asymmetry = std::max(res.max_p_asymmetry, std::abs(p[i * n + j] - p[j * n + i]));
    }
  }

  std::vector<double> y(n * 2);
  for (double& v : y) v = 1e-4 * rng.normal();
  std::vector<double> vel(n * 2, 0.0);

  const double lr = 200.0;
  std::vector<double> q(n * n), num(n * n);
  std::vector<double> grad(n * 2);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exag = iter < 100 ? 12.0 : 1.0;
    const double momentum = iter < 100 ? 0.5 : 0.8;

    double qsum = 0.0;
    for (size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (size_t j = i + 1; j < n; ++j) {
        double dy0 = y[i * 2] - y[j * 2];
        double dy1 = y[i * 2 + 1] - y[j * 2 + 1];
        double t = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
        num[i * n + j] = t;
        num[j * n + i] = t;
        qsum += 2.0 * t;
      }
    }
    double kl = 0.0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        q[i * n + j] = std::max(num[i * n + j] / qsum, p_floor);
        kl += p[i * n + j] * std::log(p[i * n + j] / q[i * n + j]);
      }
    }
    res.kl_history.push_back(kl);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double coeff = 4.0 * (exag * p[i * n + j] - q[i * n + j]) * num[i * n + j];
        grad[i * 2] += coeff * (y[i * 2] - y[j * 2]);
        grad[i * 2 + 1] += coeff * (y[i * 2 + 1] - y[j * 2 + 1]);
      }
    }
    for (size_t i = 0; i < n * 2; ++i) {
      if (!std::isfinite(grad[i])) throw std::runtime_error("tsne: non-finite gradient");
      vel[i] = momentum * vel[i] - lr * grad[i];
      y[i] += vel[i];
    }
  }
  res.coords = std::move(y);
  return res;
}

inline void write_embedding_csv(const std::string& path, const TsneResult& res,
                                const std::vector<std::string>& ids,
                                const std::vector<std::string>& labels) {
  const size_t n = res.coords.size() / 2;
  if (ids.size() != n || labels.size() != n) {
    throw std::invalid_argument("embedding csv: ids/labels size mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("embedding csv: cannot write " + path);
  out << "id,label,x,y\n";
  out.precision(9);
  for (size_t i = 0; i < n; ++i) {
    out << ids[i] << "," << labels[i] << "," << res.coords[i * 2] << "," << res.coords[i * 2 + 1]
        << "\n";
  }
}

}  // namespace lret
